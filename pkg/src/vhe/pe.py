"""Polynomial-encoding authenticator over fully packed ciphertexts.

An authenticated value is a tuple σ = (c_0, …, c_d) of ciphertexts whose
plaintexts (y_0, …, y_d) satisfy, slot for slot,

    Σ_i y_i · α^i  =  ρ  (+ offset)

where α is a secret verification point in Z_t*, ρ is the circuit applied
to per-slot PRF challenges r = F_K(base, slot), and the offset starts at
zero (re-quadratization rounds shift it in a verifier-tracked way).  A
fresh authentication has degree 1: c_0 encrypts the data m and c_1
encrypts (r − m)·α^{-1}, so y_0 + α·y_1 = r.

Homomorphic evaluation treats σ as a polynomial in α: Add/Sub act
component-wise (zero-padding shorter tuples with genuine encryptions of
zero), plaintext multiplication and slot permutations apply to every
component, and Mul convolves the component tuples, growing the degree.
Forging a result requires finding a degree-≤d polynomial identity that
holds at the secret α, which succeeds with probability about 2d/t.
"""

from __future__ import annotations

import random
import secrets as _secrets
from dataclasses import dataclass, field

import numpy as np

from . import bfv
from .circuit import (
    Program,
    _inner_sum_plain,
    _rotate_rows,
    challenge_input_pe,
    eval_challenge_pe,
    required_rotation_steps,
)
from .errors import DegreeLimitError, LayoutError, ParameterError
from .labels import Identifier, LabelRegistry, PrfKey, prf_zt
from .params import Params

MAX_DEGREE = 8


@dataclass
class PeSecret:
    """Verifier-side key: PRF key, the evaluation point α, and HE keys."""

    params: Params
    key: PrfKey
    alpha: int
    he_keys: bfv.KeySet | None = None
    registry: LabelRegistry = field(default_factory=LabelRegistry)

    @property
    def alpha_inv(self) -> int:
        return pow(self.alpha, -1, self.params.t)


@dataclass(frozen=True)
class PeAuth:
    """Authenticated ciphertext tuple (c_0, …, c_d); results carry no base."""

    cts: tuple
    base: Identifier | None = None

    @property
    def degree(self) -> int:
        return len(self.cts) - 1


def pe_keygen(
    params: Params,
    programs=(),
    extra_steps=(),
    rng: random.Random | None = None,
    make_he_keys: bool = True,
) -> PeSecret:
    """Draw the PRF key and a uniform α ∈ Z_t*; optionally make HE keys."""
    rnd = rng if rng is not None else random.Random(_secrets.randbits(128))
    alpha = rnd.randrange(1, params.t)
    key = PrfKey.generate(rnd)
    he_keys = None
    if make_he_keys:
        steps = set(extra_steps)
        for prog in programs:
            s, _ = required_rotation_steps(prog, stride=1, n_slots=params.n)
            steps |= s
        he_keys = bfv.keygen(
            params,
            rotation_steps=sorted(steps),
            rng=np.random.default_rng(rnd.getrandbits(64)),
        )
    return PeSecret(params, key, alpha, he_keys)


def pe_auth(secret: PeSecret, backend, values, base) -> PeAuth:
    """Authenticate a full slot vector under a fresh base identifier."""
    params = secret.params
    n, t = params.n, params.t
    if isinstance(base, str):
        base = Identifier(base)
    if base.slot is not None:
        raise ParameterError("base identifier must not carry a slot index")
    if len(values) != n:
        raise ParameterError(f"expected {n} slot values, got {len(values)}")
    secret.registry.register(base)
    m = [int(v) % t for v in values]
    r = [prf_zt(secret.key, base.with_slot(j), t) for j in range(n)]
    a_inv = secret.alpha_inv
    y1 = [(rj - mj) * a_inv % t for rj, mj in zip(r, m)]
    return PeAuth((backend.encrypt(m), backend.encrypt(y1)), base)


# ---------------------------------------------------------------------------
# component-tuple operations
# ---------------------------------------------------------------------------


def _pad(backend, comps: tuple, degree: int) -> tuple:
    if len(comps) - 1 >= degree:
        return comps
    pad = tuple(backend.encrypt_zero() for _ in range(degree - len(comps) + 1))
    return comps + pad


def pe_add(backend, a: tuple, b: tuple) -> tuple:
    d = max(len(a), len(b)) - 1
    a, b = _pad(backend, a, d), _pad(backend, b, d)
    return tuple(backend.add(x, y) for x, y in zip(a, b))


def pe_sub(backend, a: tuple, b: tuple) -> tuple:
    d = max(len(a), len(b)) - 1
    a, b = _pad(backend, a, d), _pad(backend, b, d)
    return tuple(backend.sub(x, y) for x, y in zip(a, b))


def pe_mul(backend, a: tuple, b: tuple, max_degree: int = MAX_DEGREE) -> tuple:
    """Full convolution of the component tuples: degree d_a + d_b."""
    d = len(a) + len(b) - 2
    if d > max_degree:
        raise DegreeLimitError(
            f"product would reach degree {d} > limit {max_degree}; "
            "re-quadratize or raise the limit"
        )
    acc: list = [None] * (d + 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            p = backend.mul(x, y)
            acc[i + j] = p if acc[i + j] is None else backend.add(acc[i + j], p)
    return tuple(acc)


def pe_map(backend, a: tuple, fn) -> tuple:
    return tuple(fn(c) for c in a)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def degree_schedule(
    program: Program, use_reducer: bool, cap: int = 2, max_degree: int = MAX_DEGREE
):
    """Simulate degrees through the circuit.

    Returns (final degree, list of mul-gate indices that exceed the at-rest
    cap and therefore get re-quadratized when a reducer is in play).  Raises
    DegreeLimitError where evaluation without a reducer would.
    """
    degs: list[int] = []
    schedule: list[int] = []
    for idx, g in enumerate(program.gates):
        if g.op == "input":
            d = 1
        elif g.op in ("add", "sub"):
            d = max(degs[g.args[0]], degs[g.args[1]])
        elif g.op == "mul":
            d = degs[g.args[0]] + degs[g.args[1]]
            if use_reducer and d > cap:
                schedule.append(idx)
                d = cap
            elif not use_reducer and d > max_degree:
                raise DegreeLimitError(
                    f"gate {idx} reaches degree {d} > limit {max_degree}"
                )
        else:
            d = degs[g.args[0]]
        degs.append(d)
    return degs[program.output], schedule


def pe_eval(
    program: Program,
    auths,
    backend,
    max_degree: int = MAX_DEGREE,
    reducer=None,
) -> PeAuth:
    """Run the program over authenticated tuples.

    `reducer`, when given, must expose `.cap` (at-rest degree bound) and
    `.reduce(comps, gate_idx) -> comps`; it is invoked on every mul output
    whose degree exceeds the cap (the interactive re-quadratization hook).
    """
    if program.width != backend.params.n:
        raise LayoutError(
            f"program width {program.width} ≠ {backend.params.n} slots"
        )
    if len(auths) != program.num_inputs:
        raise ParameterError("one authentication per program input required")
    for k, a in enumerate(auths):
        if a.base is not None and a.base != program.inputs[k]:
            raise ParameterError(
                f"input {k} was authenticated as {a.base!r} but the program "
                f"names it {program.inputs[k]!r}; verification would reject"
            )
    wires: list[tuple] = []
    for idx, g in enumerate(program.gates):
        if g.op == "input":
            v = auths[g.input_index].cts
        elif g.op == "add":
            v = pe_add(backend, wires[g.args[0]], wires[g.args[1]])
        elif g.op == "sub":
            v = pe_sub(backend, wires[g.args[0]], wires[g.args[1]])
        elif g.op == "mul":
            v = pe_mul(backend, wires[g.args[0]], wires[g.args[1]], max_degree)
            if reducer is not None and len(v) - 1 > reducer.cap:
                v = reducer.reduce(v, idx)
        elif g.op == "mul_plain":
            const = list(g.const)
            v = pe_map(backend, wires[g.args[0]], lambda c: backend.mul_plain(c, const))
        elif g.op == "rotate":
            v = pe_map(backend, wires[g.args[0]], lambda c: backend.rotate(c, g.step))
        elif g.op == "row_swap":
            v = pe_map(backend, wires[g.args[0]], backend.row_swap)
        else:  # inner_sum
            v = pe_map(
                backend, wires[g.args[0]], lambda c: backend.inner_sum(c, g.block)
            )
        wires.append(v)
    return PeAuth(wires[program.output])


# ---------------------------------------------------------------------------
# offset tracking and verification
# ---------------------------------------------------------------------------


def offset_walk(program: Program, key: PrfKey, t: int, alpha: int, omega=None):
    """Track the challenge value ρ and offset δ on every wire.

    `omega` maps a mul-gate index to the blinding vector r̄ drawn when that
    gate was re-quadratized; such a gate's outgoing offset is α·r̄ in place
    of the product rule ρ₁δ₂ + ρ₂δ₁ + δ₁δ₂.  Returns (ρ per gate, δ per
    gate, natural product-rule δ per mul gate — None elsewhere); the last
    entry is what a re-quadratization round must cancel.
    """
    omega = omega or {}
    w = program.width
    row = w // 2
    rhos: list[list[int]] = []
    deltas: list[list[int]] = []
    naturals: list = []
    for idx, g in enumerate(program.gates):
        nat = None
        if g.op == "input":
            rho = challenge_input_pe(key, program.inputs[g.input_index], w, t)
            dlt = [0] * w
        elif g.op in ("add", "sub"):
            s = 1 if g.op == "add" else -1
            r1, d1 = rhos[g.args[0]], deltas[g.args[0]]
            r2, d2 = rhos[g.args[1]], deltas[g.args[1]]
            rho = [(x + s * y) % t for x, y in zip(r1, r2)]
            dlt = [(x + s * y) % t for x, y in zip(d1, d2)]
        elif g.op == "mul":
            r1, d1 = rhos[g.args[0]], deltas[g.args[0]]
            r2, d2 = rhos[g.args[1]], deltas[g.args[1]]
            rho = [x * y % t for x, y in zip(r1, r2)]
            nat = [
                (a * y + b * x + x * y) % t
                for a, b, x, y in zip(r1, r2, d1, d2)
            ]
            dlt = (
                [alpha * v % t for v in omega[idx]] if idx in omega else nat
            )
        elif g.op == "mul_plain":
            r1, d1 = rhos[g.args[0]], deltas[g.args[0]]
            rho = [x * int(c) % t for x, c in zip(r1, g.const)]
            dlt = [x * int(c) % t for x, c in zip(d1, g.const)]
        elif g.op == "rotate":
            rho = _rotate_rows(rhos[g.args[0]], g.step, row)
            dlt = _rotate_rows(deltas[g.args[0]], g.step, row)
        elif g.op == "row_swap":
            r1, d1 = rhos[g.args[0]], deltas[g.args[0]]
            rho = r1[row:] + r1[:row]
            dlt = d1[row:] + d1[:row]
        else:  # inner_sum
            rho = _inner_sum_plain(rhos[g.args[0]], g.block, row, t)
            dlt = _inner_sum_plain(deltas[g.args[0]], g.block, row, t)
        rhos.append(rho)
        deltas.append(dlt)
        naturals.append(nat)
    return rhos, deltas, naturals


def final_offset(secret: PeSecret, program: Program, omega) -> list[int]:
    """Offset vector on the output wire after the given ReQ rounds."""
    _, deltas, _ = offset_walk(
        program, secret.key, secret.params.t, secret.alpha, omega
    )
    return deltas[program.output]


def pe_verify(
    secret: PeSecret,
    backend,
    program: Program,
    result: PeAuth,
    claimed=None,
    offset=None,
    reason: list | None = None,
) -> bool:
    """Accept iff Σ y_i α^i = ρ (+ offset) in every slot, and the claimed
    output-block values match c_0.  The verdict stays local."""

    def fail(msg: str) -> bool:
        if reason is not None:
            reason.append(msg)
        return False

    t = secret.params.t
    ys = [backend.decrypt(c) for c in result.cts]
    if claimed is not None:
        start, count = program.output_block
        if len(claimed) != count:
            raise ParameterError(
                f"output block holds {count} values, claim has {len(claimed)}"
            )
        for k in range(count):
            if ys[0][start + k] != int(claimed[k]) % t:
                return fail(f"claimed result mismatch at slot {start + k}")
    rho = eval_challenge_pe(program, secret.key, t)
    if offset is not None:
        rho = [(x + int(o)) % t for x, o in zip(rho, offset)]
    alpha = secret.alpha
    for j in range(secret.params.n):
        acc = 0
        for y in reversed(ys):
            acc = (acc * alpha + y[j]) % t
        if acc != rho[j]:
            return fail(f"response identity fails at slot {j}")
    return True


def pe_soundness_bound(degree: int, t: int) -> float:
    """False-accept chance for a degree-d response: about 2d/t."""
    return 2.0 * degree / t
