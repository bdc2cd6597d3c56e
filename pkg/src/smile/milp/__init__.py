"""LP/MILP engine and the counterexample generator built on it."""

from .bnb import BranchAndBound, WallClock, WorkClock, branch_and_bound
from .encode import (GAMMA_MIN, GeneratorEncoding, default_big_m, encode_generator,
                     head_range, interval_bounds, resolve_property)
from .generator import LOW, UP, Counterexample, GeneratorResult, active_pattern, certify, generate
from .problem import EQ, GE, LE, MilpOutcome, MilpProblem, Status
from .simplex import DualSimplex, LPResult, simplex

__all__ = [
    "BranchAndBound", "WallClock", "WorkClock", "branch_and_bound", "GAMMA_MIN",
    "GeneratorEncoding", "default_big_m", "encode_generator", "head_range",
    "interval_bounds", "resolve_property", "LOW", "UP", "Counterexample",
    "GeneratorResult", "active_pattern", "certify", "generate", "EQ", "GE", "LE",
    "MilpOutcome", "MilpProblem", "Status", "DualSimplex", "LPResult", "simplex",
]
