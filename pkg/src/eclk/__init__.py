"""Error compensated loopless Katyusha: a single-process distributed simulator."""
from .compressors import CompressorSpec, compression_ratio, delta
from .problem import LogisticProblem, Psi, build_problem, load_libsvm, parse_libsvm
from .optim import GENERAL, REFINED, HyperParams, configure, run
from .analysis import load_or_solve_oracle, lyapunov, solve_oracle

__all__ = [
    "CompressorSpec",
    "compression_ratio",
    "delta",
    "LogisticProblem",
    "Psi",
    "build_problem",
    "load_libsvm",
    "parse_libsvm",
    "GENERAL",
    "REFINED",
    "HyperParams",
    "configure",
    "run",
    "load_or_solve_oracle",
    "lyapunov",
    "solve_oracle",
]
