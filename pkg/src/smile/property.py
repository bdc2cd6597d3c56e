"""Global two-input relational properties over a box-shaped input domain.

A property pairs an input-difference box ``delta_low <= x' - x'' <= delta_high``
with an output-difference interval ``eps_low <= f(x') - f(x'') <= eps_high``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .numcore import as_array

PAIR_TOL = 1e-9


@dataclass(frozen=True)
class InputBox:
    low: np.ndarray
    high: np.ndarray
    binary: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        low = as_array(self.low, "box low").reshape(-1)
        high = as_array(self.high, "box high").reshape(-1)
        if low.shape != high.shape:
            raise ValueError("box bounds have different lengths")
        if np.any(low > high):
            raise ValueError("box has low > high")
        binary = frozenset(int(i) for i in self.binary)
        for i in binary:
            if not 0 <= i < low.size or low[i] != 0.0 or high[i] != 1.0:
                raise ValueError(f"binary feature {i} must have bounds [0, 1]")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        object.__setattr__(self, "binary", binary)

    @classmethod
    def unit(cls, m: int, binary: Iterable[int] = ()) -> "InputBox":
        return cls(np.zeros(m), np.ones(m), frozenset(binary))

    @property
    def m(self) -> int:
        return self.low.size

    def contains(self, X, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.low - tol) & (X <= self.high + tol), axis=1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        X = rng.uniform(self.low, self.high, size=(size, self.m))
        for i in self.binary:
            X[:, i] = rng.integers(0, 2, size=size)
        return X

    def to_dict(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist(),
                "binary": sorted(self.binary)}

    @classmethod
    def from_dict(cls, doc: dict) -> "InputBox":
        return cls(doc["low"], doc["high"], frozenset(doc.get("binary", ())))


@dataclass(frozen=True)
class RelationalProperty:
    delta_low: np.ndarray
    delta_high: np.ndarray
    eps_low: float
    eps_high: float
    kind: str = "custom"
    spec: dict = field(default_factory=dict, compare=False)
    # monotonicity relaxes one output side with a big-M that is recomputed per model
    auto_big_m: bool = False

    def __post_init__(self):
        dl = as_array(self.delta_low, "delta_low").reshape(-1)
        dh = as_array(self.delta_high, "delta_high").reshape(-1)
        if dl.shape != dh.shape:
            raise ValueError("delta bounds have different lengths")
        if np.any(dl > dh):
            raise ValueError("delta_low exceeds delta_high")
        if not self.eps_low <= self.eps_high:
            raise ValueError("eps_low exceeds eps_high")
        object.__setattr__(self, "delta_low", dl)
        object.__setattr__(self, "delta_high", dh)
        object.__setattr__(self, "eps_low", float(self.eps_low))
        object.__setattr__(self, "eps_high", float(self.eps_high))

    @property
    def m(self) -> int:
        return self.delta_low.size

    def check_box(self, box: InputBox) -> None:
        """Raise unless some pair of box points satisfies the input predicate."""
        if box.m != self.m:
            raise ValueError(f"property is over R^{self.m}, box over R^{box.m}")
        span = box.high - box.low
        if np.any(self.delta_high < -span) or np.any(self.delta_low > span):
            raise ValueError("no pair of inputs in the box satisfies the input predicate")

    def violation(self, y1, y2):
        return violation(self, y1, y2)

    def with_big_m(self, big_m: float) -> "RelationalProperty":
        """Concrete copy with the relaxed output side set to ``big_m``."""
        if not self.auto_big_m:
            return self
        if self.eps_high == 0.0:
            return replace(self, eps_low=-big_m, auto_big_m=False)
        return replace(self, eps_high=big_m, auto_big_m=False)

    def to_dict(self) -> dict:
        return dict(self.spec) if self.spec else {
            "kind": "custom", "delta_low": self.delta_low.tolist(),
            "delta_high": self.delta_high.tolist(),
            "eps_low": self.eps_low, "eps_high": self.eps_high}


def robustness(box: InputBox, delta: float, eps: float) -> RelationalProperty:
    """``||x' - x''||_inf <= delta  =>  |f(x') - f(x'')| <= eps``."""
    if delta < 0 or eps < 0:
        raise ValueError("robustness needs delta >= 0 and eps >= 0")
    m = box.m
    prop = RelationalProperty(np.full(m, -float(delta)), np.full(m, float(delta)),
                              -float(eps), float(eps), "robustness",
                              {"kind": "robustness", "delta": float(delta), "eps": float(eps)})
    prop.check_box(box)
    return prop


def fairness(box: InputBox, protected: Sequence[int], eps: float) -> RelationalProperty:
    """Inputs that differ only on protected features have outputs within ``eps``."""
    protected = sorted({int(i) for i in protected})
    if not protected:
        raise ValueError("fairness needs at least one protected feature")
    if eps < 0:
        raise ValueError("fairness needs eps >= 0")
    dl, dh = np.zeros(box.m), np.zeros(box.m)
    for i in protected:
        dl[i] = box.low[i] - box.high[i]
        dh[i] = box.high[i] - box.low[i]
    prop = RelationalProperty(dl, dh, -float(eps), float(eps), "fairness",
                              {"kind": "fairness", "eps": float(eps), "protected": protected})
    prop.check_box(box)
    return prop


def monotonicity(box: InputBox, monotone: Sequence[int], direction: str = "nondecreasing",
                 big_m: float | None = None) -> RelationalProperty:
    """Ordering the monotone features (others equal) orders the outputs.

    Nondecreasing: ``x' <= x''`` on the monotone features implies ``f(x') <= f(x'')``;
    nonincreasing keeps the same input predicate and implies ``f(x') >= f(x'')``.
    With ``big_m=None`` the relaxed output bound is filled in per model
    (see :func:`default_big_m`).
    """
    monotone = sorted({int(i) for i in monotone})
    if not monotone:
        raise ValueError("monotonicity needs at least one monotone feature")
    if direction not in ("nondecreasing", "nonincreasing"):
        raise ValueError(f"unknown direction {direction!r}")
    if big_m is not None and big_m <= 0:
        raise ValueError("big_m must be positive")
    M = float(big_m) if big_m is not None else 1.0
    dl, dh = np.zeros(box.m), np.zeros(box.m)
    for i in monotone:
        dl[i] = box.low[i] - box.high[i]
    spec = {"kind": "monotonicity", "protected": monotone, "direction": direction}
    if big_m is not None:
        spec["M"] = M
    eps = (-M, 0.0) if direction == "nondecreasing" else (0.0, M)
    prop = RelationalProperty(dl, dh, eps[0], eps[1], "monotonicity", spec,
                              auto_big_m=big_m is None)
    prop.check_box(box)
    return prop


def violation(prop: RelationalProperty, y1, y2):
    """Overshoot of ``y1 - y2`` outside ``[eps_low, eps_high]`` (0 when satisfied)."""
    d = np.asarray(y1, dtype=np.float64) - np.asarray(y2, dtype=np.float64)
    v = np.maximum(0.0, np.maximum(prop.eps_low - d, d - prop.eps_high))
    return float(v) if v.ndim == 0 else v


def pair_satisfies_q(prop: RelationalProperty, box: InputBox, x1, x2,
                     tol: float = PAIR_TOL) -> bool:
    d = np.asarray(x1, dtype=np.float64) - np.asarray(x2, dtype=np.float64)
    return bool(np.all(d >= prop.delta_low - tol) and np.all(d <= prop.delta_high + tol))


def sample_q_pairs(prop: RelationalProperty, box: InputBox, rng: np.random.Generator,
                   size: int) -> tuple[np.ndarray, np.ndarray]:
    """Random pairs inside the box whose difference lies in ``[delta_low, delta_high]``.

    ``x''`` is drawn uniformly from the box, then ``x'`` uniformly from the
    intersection of the box with ``x'' + [delta_low, delta_high]``. Binary
    features are kept in {0, 1}.
    """
    x2 = box.sample(rng, size)
    lo = np.maximum(box.low, x2 + prop.delta_low)
    hi = np.minimum(box.high, x2 + prop.delta_high)
    x1 = lo + rng.uniform(size=x2.shape) * (hi - lo)
    for i in box.binary:
        choices = np.stack([np.zeros(size), np.ones(size)], axis=1)
        ok = (choices >= lo[:, [i]] - PAIR_TOL) & (choices <= hi[:, [i]] + PAIR_TOL)
        pick = rng.integers(0, 2, size=size)
        pick = np.where(ok[np.arange(size), pick], pick, 1 - pick)
        x1[:, i] = pick
    return x1, x2


def from_spec(doc: dict, box: InputBox) -> RelationalProperty:
    """Build a property from its JSON description."""
    kind = doc.get("kind")
    if kind == "robustness":
        return robustness(box, doc["delta"], doc["eps"])
    if kind == "fairness":
        return fairness(box, doc["protected"], doc["eps"])
    if kind == "monotonicity":
        return monotonicity(box, doc["protected"], doc.get("direction", "nondecreasing"),
                            doc.get("M"))
    if kind == "custom":
        return RelationalProperty(doc["delta_low"], doc["delta_high"],
                                  doc["eps_low"], doc["eps_high"], "custom", dict(doc))
    raise ValueError(f"unknown property kind {kind!r}")


def load_spec(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("property file must be a JSON object with a 'kind' field")
    return doc
