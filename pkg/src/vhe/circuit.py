"""Labeled arithmetic programs over batched slot vectors.

A program is a topologically ordered list of gates over Z_t slot vectors of
a fixed logical width W (arranged as two rows of W/2, mirroring the
batching layout).  Gate set:

    input         k-th authenticated input
    add, sub, mul slot-wise ring ops (mul is the only depth-consuming gate)
    mul_plain     slot-wise product with a public constant vector
    rotate        cyclic shift within each row by a signed step
    row_swap      exchange the two rows
    inner_sum     every slot ← sum of its aligned block of `block`
                  consecutive slots (blocks never straddle a row)

The same structure is interpreted three ways: over plain data
(:func:`eval_plain`), over PRF challenge values (:func:`eval_challenge`),
and over ciphertexts (:func:`eval_he`, with an optional replication stride
so a logically identical program can run on block-extended layouts).
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field

from .errors import ParameterError, StructureError
from .labels import Identifier, prf_zt

_OPS = ("input", "add", "sub", "mul", "mul_plain", "rotate", "row_swap", "inner_sum")
_BINARY = ("add", "sub", "mul")
_TREE_TAG = {op: bytes([i + 1]) for i, op in enumerate(_OPS)}


@dataclass(frozen=True)
class Gate:
    op: str
    args: tuple = ()
    input_index: int | None = None
    const: tuple | None = None
    step: int | None = None
    block: int | None = None

    def tree_bytes(self) -> bytes:
        """Canonical bytes binding this gate's kind and parameters."""
        out = [_TREE_TAG[self.op]]
        if self.op == "mul_plain":
            out.append(struct.pack("<I", len(self.const)))
            out.extend(struct.pack("<Q", int(c)) for c in self.const)
        elif self.op == "rotate":
            out.append(struct.pack("<q", self.step))
        elif self.op == "inner_sum":
            out.append(struct.pack("<Q", self.block))
        return b"".join(out)


@dataclass(frozen=True)
class Program:
    """An immutable labeled program (gates in topological order)."""

    width: int
    inputs: tuple  # one base Identifier per input
    gates: tuple
    output: int
    output_block: tuple = (0, 1)  # (start, count) in logical slots
    name: str = ""

    @property
    def num_inputs(self) -> int:
        return len(self.inputs)

    @property
    def depth(self) -> int:
        """Multiplicative depth: longest chain of ciphertext-ciphertext muls."""
        d = [0] * len(self.gates)
        for i, g in enumerate(self.gates):
            if g.op == "input":
                d[i] = 0
            elif g.op == "mul":
                d[i] = 1 + max(d[a] for a in g.args)
            elif g.args:
                d[i] = max(d[a] for a in g.args)
        return d[self.output] if self.gates else 0

    @property
    def mul_gate_count(self) -> int:
        return sum(1 for g in self.gates if g.op == "mul")

    def validate(self):
        w = self.width
        if w < 2 or w & (w - 1):
            raise StructureError(f"width must be a power of two ≥ 2, got {w}")
        row = w // 2
        seen_inputs = set()
        for i, g in enumerate(self.gates):
            if g.op not in _OPS:
                raise StructureError(f"unknown op {g.op!r}")
            if any(a >= i or a < 0 for a in g.args):
                raise StructureError(f"gate {i} references a later gate")
            if g.op == "input":
                if g.input_index is None or not (0 <= g.input_index < self.num_inputs):
                    raise StructureError(f"gate {i}: bad input index")
                seen_inputs.add(g.input_index)
            elif g.op in _BINARY:
                if len(g.args) != 2:
                    raise StructureError(f"gate {i}: {g.op} takes two operands")
            elif g.op == "mul_plain":
                if len(g.args) != 1 or g.const is None or len(g.const) != w:
                    raise StructureError(f"gate {i}: mul_plain needs a width-{w} constant")
            elif g.op == "rotate":
                if len(g.args) != 1 or g.step is None or not (-row < g.step < row):
                    raise StructureError(f"gate {i}: rotate step must satisfy |step| < {row}")
            elif g.op == "row_swap":
                if len(g.args) != 1:
                    raise StructureError(f"gate {i}: row_swap takes one operand")
            elif g.op == "inner_sum":
                b = g.block
                if (
                    len(g.args) != 1
                    or b is None
                    or b < 1
                    or b & (b - 1)
                    or row % b != 0
                ):
                    raise StructureError(
                        f"gate {i}: inner_sum block must be a power of two dividing {row}"
                    )
        if not (0 <= self.output < len(self.gates)):
            raise StructureError("output index out of range")
        start, count = self.output_block
        if count < 1 or start < 0 or start + count > w:
            raise StructureError("output block outside the slot range")
        return self


class ProgramBuilder:
    """Incremental construction; methods return wire indices."""

    def __init__(self, width: int, name: str = ""):
        self.width = width
        self.name = name
        self._gates: list[Gate] = []
        self._inputs: list[Identifier] = []

    def input(self, ident) -> int:
        if isinstance(ident, str):
            ident = Identifier(ident)
        self._inputs.append(ident)
        self._gates.append(Gate("input", input_index=len(self._inputs) - 1))
        return len(self._gates) - 1

    def _push(self, gate: Gate) -> int:
        self._gates.append(gate)
        return len(self._gates) - 1

    def add(self, a, b):
        return self._push(Gate("add", (a, b)))

    def sub(self, a, b):
        return self._push(Gate("sub", (a, b)))

    def mul(self, a, b):
        return self._push(Gate("mul", (a, b)))

    def mul_plain(self, a, const):
        return self._push(Gate("mul_plain", (a,), const=tuple(int(c) for c in const)))

    def rotate(self, a, step):
        return self._push(Gate("rotate", (a,), step=int(step)))

    def row_swap(self, a):
        return self._push(Gate("row_swap", (a,)))

    def inner_sum(self, a, block):
        return self._push(Gate("inner_sum", (a,), block=int(block)))

    def build(self, output: int, output_block=(0, 1), name=None) -> Program:
        prog = Program(
            width=self.width,
            inputs=tuple(self._inputs),
            gates=tuple(self._gates),
            output=output,
            output_block=tuple(output_block),
            name=self.name if name is None else name,
        )
        return prog.validate()


# ---------------------------------------------------------------------------
# plain interpreter (the semantic reference for the other two)
# ---------------------------------------------------------------------------


def _rotate_rows(vec, step, row):
    out = []
    for r in range(0, len(vec), row):
        chunk = vec[r : r + row]
        s = step % row
        out.extend(chunk[s:] + chunk[:s])
    return out


def _inner_sum_plain(vec, block, row, t):
    out = list(vec)
    for r in range(0, len(vec), row):
        for b in range(r, r + row, block):
            s = sum(vec[b : b + block]) % t
            for j in range(b, b + block):
                out[j] = s
    return out


def eval_plain(program: Program, inputs, t: int) -> list[int]:
    """Evaluate over plain slot vectors mod t; returns the output wire."""
    w = program.width
    row = w // 2
    ins = [list(int(x) % t for x in v) for v in inputs]
    if len(ins) != program.num_inputs:
        raise ParameterError(
            f"program expects {program.num_inputs} inputs, got {len(ins)}"
        )
    if any(len(v) != w for v in ins):
        raise ParameterError(f"every input must have width {w}")
    wires: list[list[int]] = []
    for g in program.gates:
        if g.op == "input":
            v = ins[g.input_index]
        elif g.op == "add":
            a, b = wires[g.args[0]], wires[g.args[1]]
            v = [(x + y) % t for x, y in zip(a, b)]
        elif g.op == "sub":
            a, b = wires[g.args[0]], wires[g.args[1]]
            v = [(x - y) % t for x, y in zip(a, b)]
        elif g.op == "mul":
            a, b = wires[g.args[0]], wires[g.args[1]]
            v = [x * y % t for x, y in zip(a, b)]
        elif g.op == "mul_plain":
            a = wires[g.args[0]]
            v = [x * int(c) % t for x, c in zip(a, g.const)]
        elif g.op == "rotate":
            v = _rotate_rows(wires[g.args[0]], g.step, row)
        elif g.op == "row_swap":
            a = wires[g.args[0]]
            v = a[row:] + a[:row]
        else:  # inner_sum
            v = _inner_sum_plain(wires[g.args[0]], g.block, row, t)
        wires.append(v)
    return wires[program.output]


# ---------------------------------------------------------------------------
# challenge interpreter
# ---------------------------------------------------------------------------


def challenge_input_pe(key, base: Identifier, width: int, t: int) -> list[int]:
    """Per-slot PRF values for a fully packed input: slot j ← F_K(base, j)."""
    return [prf_zt(key, base.with_slot(j), t) for j in range(width)]


def challenge_input_rep(key, base: Identifier, length: int, width: int, t: int, col: int):
    """Challenge column `col` of a replication-encoded input.

    Component i carries identifier (base, slot=i); positions past the
    authenticated length are zero padding, matching the encoder.
    """
    vec = [0] * width
    for i in range(length):
        vec[i] = prf_zt(key, base.with_slot(i), t, aux=col)
    return vec


def eval_challenge_pe(program: Program, key, t: int) -> list[int]:
    """Evaluate the program on per-slot PRF challenges (packed convention)."""
    ins = [
        challenge_input_pe(key, base, program.width, t) for base in program.inputs
    ]
    return eval_plain(program, ins, t)


def eval_challenge_rep(program: Program, key, t: int, lengths, col: int) -> list[int]:
    """Evaluate on challenge column `col` (replication convention)."""
    ins = [
        challenge_input_rep(key, base, lengths[k], program.width, t, col)
        for k, base in enumerate(program.inputs)
    ]
    return eval_plain(program, ins, t)


# ---------------------------------------------------------------------------
# homomorphic interpreter
# ---------------------------------------------------------------------------


def extend_const(const, stride: int):
    """Replicate each logical constant across its block of `stride` slots."""
    if stride == 1:
        return list(const)
    out = []
    for c in const:
        out.extend([int(c)] * stride)
    return out


def eval_he(program: Program, cts, backend, stride: int = 1):
    """Run the program on ciphertexts.

    With ``stride`` > 1 every logical slot occupies a block of `stride`
    physical slots (replication layout): rotation steps and inner_sum blocks
    scale by the stride and plain constants are block-replicated, so the
    physical computation restricts to the logical one on every block offset
    independently.
    """
    if program.width * stride != backend.params.n:
        raise ParameterError(
            f"program width {program.width} × stride {stride} ≠ {backend.params.n} slots"
        )
    if len(cts) != program.num_inputs:
        raise ParameterError("one ciphertext per program input required")
    wires = []
    for g in program.gates:
        if g.op == "input":
            v = cts[g.input_index]
        elif g.op == "add":
            v = backend.add(wires[g.args[0]], wires[g.args[1]])
        elif g.op == "sub":
            v = backend.sub(wires[g.args[0]], wires[g.args[1]])
        elif g.op == "mul":
            v = backend.mul(wires[g.args[0]], wires[g.args[1]])
        elif g.op == "mul_plain":
            v = backend.mul_plain(wires[g.args[0]], extend_const(g.const, stride))
        elif g.op == "rotate":
            v = backend.rotate(wires[g.args[0]], g.step * stride)
        elif g.op == "row_swap":
            v = backend.row_swap(wires[g.args[0]])
        else:
            v = backend.inner_sum(wires[g.args[0]], g.block, stride=stride)
        wires.append(v)
    return wires[program.output]


def required_rotation_steps(program: Program, stride: int = 1, n_slots: int | None = None):
    """Signed physical rotation steps the program needs (plus row swap flag).

    inner_sum(b) expands to a window phase (positive steps stride·2^u) and,
    unless the block spans a full row, a mask-and-broadcast phase using the
    matching negative steps.
    """
    steps: set[int] = set()
    needs_swap = False
    if n_slots is None:
        n_slots = program.width * stride
    row = n_slots // 2
    for g in program.gates:
        if g.op == "rotate" and g.step != 0:
            steps.add(g.step * stride)
        elif g.op == "row_swap":
            needs_swap = True
        elif g.op == "inner_sum":
            u = 1
            while u < g.block:
                steps.add(u * stride)
                if g.block * stride != row:
                    steps.add(-u * stride)
                u *= 2
    return steps, needs_swap


# ---------------------------------------------------------------------------
# seeded random programs
# ---------------------------------------------------------------------------


def random_program(
    rng: random.Random,
    width: int,
    t: int,
    num_inputs: int = 2,
    max_gates: int = 8,
    max_depth: int = 3,
    name: str = "",
    id_prefix: str = "rnd",
) -> Program:
    """A random well-formed program within the gate and depth budget.

    `max_gates` counts non-input gates.  Multiplicative depth never exceeds
    `max_depth`.  The output block is a small logical range so the same
    program works for both authenticated pipelines.
    """
    b = ProgramBuilder(width, name=name)
    wires = []
    depth = {}
    for k in range(num_inputs):
        w = b.input(Identifier(f"{id_prefix}/in{k}"))
        wires.append(w)
        depth[w] = 0
    row = width // 2
    n_gates = rng.randint(max(1, max_gates - 4), max_gates)
    ops = ["add", "sub", "mul", "mul_plain", "rotate", "row_swap", "inner_sum"]
    weights = [4, 3, 4, 2, 3, 1, 2]
    for _ in range(n_gates):
        op = rng.choices(ops, weights)[0]
        a = rng.choice(wires)
        if op == "mul":
            candidates = [
                x for x in wires if max(depth[a], depth[x]) + 1 <= max_depth
            ]
            if depth[a] + 1 > max_depth or not candidates:
                op = "add"  # depth budget spent; fall back to a linear gate
            else:
                c = rng.choice(candidates)
                w = b.mul(a, c)
                depth[w] = max(depth[a], depth[c]) + 1
                wires.append(w)
                continue
        if op in ("add", "sub"):
            c = rng.choice(wires)
            w = getattr(b, op)(a, c)
            depth[w] = max(depth[a], depth[c])
        elif op == "mul_plain":
            const = [rng.randrange(t) for _ in range(width)]
            w = b.mul_plain(a, const)
            depth[w] = depth[a]
        elif op == "rotate":
            if row < 2:
                w = b.add(a, a)
            else:
                w = b.rotate(a, rng.randint(1, row - 1) * rng.choice((1, -1)))
            depth[w] = depth[a]
        elif op == "row_swap":
            w = b.row_swap(a)
            depth[w] = depth[a]
        else:
            blocks = [x for x in (1, 2, 4, 8) if x <= row and row % x == 0]
            w = b.inner_sum(a, rng.choice(blocks))
            depth[w] = depth[a]
        wires.append(w)
    out = wires[-1]
    count = min(4, width)
    start = rng.randrange(0, width - count + 1)
    return b.build(out, output_block=(start, count), name=name)


# ---------------------------------------------------------------------------
# JSON form (canonical, replayable)
# ---------------------------------------------------------------------------


def program_to_json(program: Program) -> str:
    gates = []
    for g in program.gates:
        entry: dict = {"op": g.op}
        if g.op == "input":
            entry["input"] = g.input_index
        else:
            entry["args"] = list(g.args)
        if g.const is not None:
            entry["const"] = list(g.const)
        if g.step is not None:
            entry["step"] = g.step
        if g.block is not None:
            entry["block"] = g.block
        gates.append(entry)
    doc = {
        "width": program.width,
        "inputs": [
            {"label": i.label, **({"slot": i.slot} if i.slot is not None else {})}
            for i in program.inputs
        ],
        "gates": gates,
        "output": program.output,
        "output_block": list(program.output_block),
        "name": program.name,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def program_from_json(text: str) -> Program:
    doc = json.loads(text)
    gates = []
    for e in doc["gates"]:
        gates.append(
            Gate(
                op=e["op"],
                args=tuple(e.get("args", ())),
                input_index=e.get("input"),
                const=tuple(e["const"]) if "const" in e else None,
                step=e.get("step"),
                block=e.get("block"),
            )
        )
    prog = Program(
        width=doc["width"],
        inputs=tuple(
            Identifier(i["label"], i.get("slot")) for i in doc["inputs"]
        ),
        gates=tuple(gates),
        output=doc["output"],
        output_block=tuple(doc["output_block"]),
        name=doc.get("name", ""),
    )
    return prog.validate()
