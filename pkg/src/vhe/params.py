"""Parameter sets for the encrypted-computation backend.

The ciphertext modulus is a chain of distinct ~29-bit NTT-friendly primes
(kept below 2^30 so every butterfly product fits exactly in int64), the
plaintext modulus is a batching-friendly prime t ≪ Q, and the error
distribution is a centered binomial approximating a discrete Gaussian.

Presets are sized by measured noise margins: the `depth_budget` on each is
the multiplicative depth the chain comfortably supports at its plaintext
modulus, not a hard limiter (decryption verifies the actual noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .errors import ParameterError
from .ring import find_ntt_primes, find_plaintext_prime, get_modulus, is_prime

CHAIN_PRIME_BITS = 29


@dataclass(frozen=True)
class Params:
    """Ring degree, plaintext prime, RNS chain, and noise configuration."""

    n: int
    t: int
    q_chain: tuple
    err_std: float = 3.2
    decomp_base_bits: int = 16
    depth_budget: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ParameterError(f"ring degree must be a power of two, got {self.n}")
        if self.t % (2 * self.n) != 1 or not is_prime(self.t):
            raise ParameterError(
                f"plaintext modulus must be a prime ≡ 1 mod {2 * self.n}"
            )
        if len(set(self.q_chain)) != len(self.q_chain) or not self.q_chain:
            raise ParameterError("q_chain must be a non-empty set of distinct primes")
        for q in self.q_chain:
            if q % (2 * self.n) != 1 or not is_prime(q):
                raise ParameterError(f"chain prime {q} is not NTT-friendly for n={self.n}")
            if q >= 1 << 30:
                raise ParameterError(f"chain prime {q} too wide for exact int64 NTT")
        if self.t in self.q_chain:
            raise ParameterError("plaintext prime may not appear in the chain")
        if self.big_q <= 4 * self.t:
            raise ParameterError("ciphertext modulus must dominate the plaintext modulus")
        if not (1 <= self.decomp_base_bits <= 16):
            raise ParameterError("decomposition base must be 2^w with 1 ≤ w ≤ 16")

    @property
    def big_q(self) -> int:
        q = 1
        for p in self.q_chain:
            q *= p
        return q

    @property
    def delta(self) -> int:
        """⌊Q/t⌋, the plaintext scaling factor."""
        return self.big_q // self.t

    @property
    def level(self) -> int:
        """Active chain length (no modulus switching: always the full chain)."""
        return len(self.q_chain)

    @property
    def t_modulus(self):
        return get_modulus(self.t, self.n)

    def describe(self) -> str:
        return (
            f"{self.name or 'custom'}: n={self.n}, log2(Q)≈{self.big_q.bit_length()}, "
            f"t={self.t} ({self.t.bit_length()}-bit), chain={len(self.q_chain)} primes, "
            f"depth budget={self.depth_budget}"
        )


def make_params(
    n: int,
    t_bits: int = 16,
    chain_len: int = 4,
    err_std: float = 3.2,
    decomp_base_bits: int = 16,
    depth_budget: int | None = None,
    name: str = "",
    t: int | None = None,
) -> Params:
    """Construct a parameter set, searching for suitable primes."""
    if t is None:
        t = find_plaintext_prime(t_bits, n).value
    chain = tuple(find_ntt_primes(CHAIN_PRIME_BITS, n, chain_len, exclude=(t,)))
    return Params(
        n=n,
        t=t,
        q_chain=chain,
        err_std=err_std,
        decomp_base_bits=decomp_base_bits,
        depth_budget=depth_budget,
        name=name,
    )


_PRESETS = {
    # desk-scale default: one multiplication level plus masking headroom
    "n4096_fast": dict(n=4096, t_bits=16, chain_len=5, depth_budget=2),
    # desk-scale, depth-3 capable (random-program sweeps, ReQ pipelines)
    "n4096": dict(n=4096, t_bits=16, chain_len=7, depth_budget=3),
    # deep desk preset (batching needs t ≡ 1 mod 2n, so ≥ 17 plaintext bits
    # from n = 8192 up; 65537 is the smallest qualifying prime)
    "n8192": dict(n=8192, t_bits=17, chain_len=9, depth_budget=5),
    # extra-deep variant for the bit-level lookup demonstration
    "n8192_deep": dict(n=8192, t_bits=17, chain_len=13, depth_budget=8),
    # production-shaped preset (log2 Q ≈ 700); provided for completeness,
    # far slower than the desk presets
    "n32768_prod": dict(n=32768, t_bits=17, chain_len=24, depth_budget=15),
    # small rings for statistics on the exact-semantics mock backend; the
    # chains are sized so the same parameters also run on the real backend
    # at a few levels of depth (the mock itself never touches the chain)
    "mock16": dict(n=16, t_bits=16, chain_len=4, depth_budget=2),
    # chain 5: enough real-backend headroom for depth 2 plus the packed
    # proof's plaintext-power products on top
    "mock64": dict(n=64, t_bits=16, chain_len=5, depth_budget=2),
    # multiplication noise scales with t, so the 40-bit-plaintext variants
    # need a longer chain for the same depth on the real backend
    "mock64_wide": dict(n=64, t_bits=40, chain_len=8, depth_budget=2),
    "mock1024": dict(n=1024, t_bits=16, chain_len=4, depth_budget=2),
    "mock4096_wide": dict(n=4096, t_bits=40, chain_len=8, depth_budget=2),
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


@lru_cache(maxsize=None)
def preset(name: str) -> Params:
    if name not in _PRESETS:
        raise ParameterError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    cfg = dict(_PRESETS[name])
    return make_params(name=name, **cfg)


def params_with_t_bits(base: Params, t_bits: int) -> Params:
    """Same ring/chain shape, different plaintext prime width."""
    if t_bits > 59:
        raise ParameterError(
            "plaintext primes above 59 bits are unsupported: slot residues are "
            "serialized as u64 and the modulus cap is 2^60 (use a smaller "
            "security parameter for the polynomial encoding)"
        )
    t = find_plaintext_prime(t_bits, base.n).value
    if t in base.q_chain:
        chain = tuple(
            find_ntt_primes(CHAIN_PRIME_BITS, base.n, len(base.q_chain), exclude=(t,))
        )
    else:
        chain = base.q_chain
    return Params(
        n=base.n,
        t=t,
        q_chain=chain,
        err_std=base.err_std,
        decomp_base_bits=base.decomp_base_bits,
        depth_budget=base.depth_budget,
        name=f"{base.name}/t{t_bits}",
    )
