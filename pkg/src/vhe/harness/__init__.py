"""Experiment driver: use-case pipelines, adversary simulation, benchmarks.

Everything here composes the library layers end to end: desk-scale
workloads (:mod:`.usecases`), covert-adversary acceptance statistics
(:mod:`.attacks`), amortized operation timings (:mod:`.bench`), and the
``vhe`` command-line entry point (:mod:`.cli`).
"""

from .attacks import AttackReport, AttackSpec, simulate_adversary, wilson_interval
from .bench import BenchRow, run_bench
from .usecases import AUTH_MODES, USECASES, UseCaseReport, UseCaseSpec, run_usecase, usecase_spec

__all__ = [
    "AttackReport",
    "AttackSpec",
    "simulate_adversary",
    "wilson_interval",
    "BenchRow",
    "run_bench",
    "AUTH_MODES",
    "USECASES",
    "UseCaseReport",
    "UseCaseSpec",
    "run_usecase",
    "usecase_spec",
]
