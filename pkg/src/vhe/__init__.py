"""Verifiable computation on BFV-encrypted data.

Building blocks:

- :mod:`vhe.ring` — exact negacyclic polynomial arithmetic, NTT, batching.
- :mod:`vhe.bfv` — the leveled BFV backend (RNS form, rotation keys).
- :mod:`vhe.mock` — an exact-semantics stand-in backend for fast statistics.
- :mod:`vhe.labels` — PRF / hash-tree primitives and identifier bookkeeping.
- :mod:`vhe.circuit` — labeled programs and their three interpreters.
- :mod:`vhe.rep` — replication-style authenticated encodings (Scheme "REP").
- :mod:`vhe.pe` — polynomial-encoding authenticator (Scheme "PE").
- :mod:`vhe.protocols` — interactive verification (PP) and re-quadratization
  (ReQ) sessions over in-memory or TCP transports.
- :mod:`vhe.harness` — use cases, attack simulations, benchmarks, CLI.
"""

__version__ = "0.1.0"
