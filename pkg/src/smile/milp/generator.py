"""Counterexample generation with a doubling time limit."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import SmileModel
from ..property import InputBox, RelationalProperty
from .bnb import BranchAndBound, WallClock, WorkClock
from .encode import GAMMA_MIN, GeneratorEncoding, encode_generator
from .problem import MilpOutcome, Status

LOW, UP = 0, 1


def active_pattern(z: np.ndarray, low: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Per coordinate, which auxiliary face ``z`` sits on (ties go to the lower one)."""
    return np.where(np.abs(z - low) <= np.abs(z - up), LOW, UP)


@dataclass
class Counterexample:
    x1: np.ndarray
    x2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    pattern1: np.ndarray
    pattern2: np.ndarray
    gamma: float
    prop: RelationalProperty

    def to_dict(self) -> dict:
        return {"x1": self.x1.tolist(), "x2": self.x2.tolist(), "z1": self.z1.tolist(),
                "z2": self.z2.tolist(), "pattern1": self.pattern1.tolist(),
                "pattern2": self.pattern2.tolist(), "gamma": self.gamma}


@dataclass
class GeneratorResult:
    outcome: MilpOutcome
    counterexample: Counterexample | None
    gamma_bar: float
    calls: int
    limits: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def status(self) -> Status:
        return self.outcome.status

    @property
    def infeasible(self) -> bool:
        return self.outcome.status == Status.INFEASIBLE


def make_clock(kind: str):
    if kind == "work":
        return WorkClock()
    if kind == "wall":
        return WallClock()
    raise ValueError(f"unknown clock {kind!r}")


def generate(model: SmileModel, prop: RelationalProperty, box: InputBox,
             t0: float = 1.0, t_max: float = 64.0, clock: str = "work",
             gamma_min: float = GAMMA_MIN,
             encoding: GeneratorEncoding | None = None) -> GeneratorResult:
    """Search for the pair of inputs that violates ``prop`` the most.

    The solver is resumed with limits ``t0, 2 t0, 4 t0, ...`` and stops as soon
    as it holds a violating pair or has proven that none exists; once the
    limit would exceed ``t_max`` the best dual bound is returned instead.
    """
    if t0 <= 0 or t_max < t0:
        raise ValueError("need 0 < t0 <= t_max")
    started = time.perf_counter()
    enc = encoding or encode_generator(model, prop, box, gamma_min)
    solver = BranchAndBound(enc.problem, enc.heuristic, make_clock(clock))
    t = t0
    calls = 0
    limits = []
    while True:
        outcome = solver.solve(t)
        calls += 1
        limits.append(t)
        if outcome.has_incumbent or outcome.status == Status.INFEASIBLE:
            break
        t *= 2.0
        if t > t_max:
            break
    ce = None
    if outcome.has_incumbent and outcome.incumbent_objective > 0.0:
        ce = _counterexample(enc, outcome.incumbent)
    if outcome.status == Status.INFEASIBLE:
        # no pair violates by gamma_min or more
        gamma_bar = 0.0
    else:
        gamma_bar = float(outcome.dual_bound)
    return GeneratorResult(outcome, ce, gamma_bar, calls, limits,
                           time.perf_counter() - started)


def _counterexample(enc: GeneratorEncoding, sol: np.ndarray) -> Counterexample:
    d = enc.decode(sol)
    model = enc.model
    p1 = active_pattern(d["z1"], model.aux_low(d["x1"]), model.aux_up(d["x1"]))
    p2 = active_pattern(d["z2"], model.aux_low(d["x2"]), model.aux_up(d["x2"]))
    return Counterexample(d["x1"].copy(), d["x2"].copy(), d["z1"].copy(), d["z2"].copy(),
                          p1, p2, d["gamma"], enc.prop)


def certify(model: SmileModel, prop: RelationalProperty, box: InputBox,
            t0: float = 1.0, clock: str = "work") -> GeneratorResult:
    """Complete search: runs until a violation is found or ruled out."""
    return generate(model, prop, box, t0, math.inf, clock)
