"""Desk-scale experiment drivers: monotonic regression, robustness, fairness."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..milp.encode import resolve_property
from ..model import SmileModel
from ..property import InputBox, RelationalProperty, fairness, monotonicity, robustness
from ..property import sample_q_pairs, violation
from ..training import TrainConfig, TrainReport, train
from .data import Dataset, gen_monotonic, gen_moons, load_fairness
from .defense import defend_batch, random_attack
from .metrics import accuracy, counterfactual_variation, r2

MONOTONIC_GRID = [(a, w) for a in (2.0, 3.0, 4.0) for w in (0.4, 0.6, 0.8)]
ROBUST_GRID = [(d, e) for d in (0.01, 0.05, 0.1) for e in (0.75, 1.0, 1.25)]
FAIR_EPS = (0.1, 0.3, 0.5)

MONOTONIC_CONFIG = dict(loss="mse", lr=3e-3, pretrain_epochs=200, pretrain_patience=10,
                        train_epochs=20, batch_size=64)
ROBUST_CONFIG = dict(loss="bce", lr=3e-3, pretrain_epochs=60, pretrain_patience=None,
                     train_epochs=20, batch_size=64)
# one epoch of batches between searches once a search comes back empty
FAIR_CONFIG = dict(loss="bce", lr=3e-3, pretrain_epochs=60, pretrain_patience=None,
                   train_epochs=20, batch_size=64, regen_cooldown=19)


@dataclass
class RunResult:
    name: str
    model: SmileModel
    report: TrainReport
    prop: RelationalProperty
    box: InputBox
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0


def sampled_violation(model: SmileModel, prop: RelationalProperty, box: InputBox,
                      samples: int = 100_000, seed: int = 0) -> float:
    """Largest violation through the deployed model over random pairs satisfying the input predicate."""
    prop = resolve_property(prop, model, box)
    rng = np.random.default_rng(seed)
    x1, x2 = sample_q_pairs(prop, box, rng, samples)
    return float(np.max(violation(prop, model.predict(x1), model.predict(x2))))


def _config(base: dict, seed: int, overrides: dict | None) -> TrainConfig:
    return TrainConfig(**{**base, "seed": seed, **(overrides or {})})


def run_monotonic(alpha: float, omega: float, n: int = 2000, seed: int = 0,
                  aux_hidden: int = 8, overrides: dict | None = None) -> RunResult:
    ds = gen_monotonic(alpha, omega, n, seed=seed)
    tr, te = ds.split(int(0.8 * n))
    prop = monotonicity(ds.box, [0])
    model = SmileModel.init(1, 8, (32, 32), aux_hidden=aux_hidden, seed=seed)
    t = time.perf_counter()
    report = train(model, tr.X, tr.y, prop, ds.box, _config(MONOTONIC_CONFIG, seed, overrides))
    seconds = time.perf_counter() - t
    metrics = {"r2": r2(te.y, model.predict(te.X)), "violBound": report.viol_bound}
    return RunResult(f"monotonic_a{alpha}_w{omega}", model, report, prop, ds.box, metrics, seconds)


def run_robust(delta: float, eps: float, n_train: int = 2000, n_test: int = 1000, seed: int = 0,
               overrides: dict | None = None) -> RunResult:
    ds = gen_moons(n_train + n_test, seed=seed)
    tr, te = ds.split(n_train)
    prop = robustness(ds.box, delta, eps)
    model = SmileModel.init(2, 8, (32, 32), aux_hidden=None, seed=seed)
    t = time.perf_counter()
    report = train(model, tr.X, tr.y, prop, ds.box, _config(ROBUST_CONFIG, seed, overrides))
    seconds = time.perf_counter() - t
    logits = model.predict(te.X)
    baseline = 100.0 * max(te.y.mean(), 1.0 - te.y.mean())
    metrics = {"clean": accuracy(te.y, logits), "baseline": baseline,
               "violBound": report.viol_bound}
    return RunResult(f"robust_d{delta}_e{eps}", model, report, prop, ds.box, metrics, seconds)


def robust_attack_check(run: RunResult, X, trials: int = 10_000, seed: int = 0) -> dict:
    """Attack every Certified point; count verdict flips and time the defense."""
    delta, eps = run.prop.spec["delta"], run.prop.spec["eps"]
    t = time.perf_counter()
    verdicts = defend_batch(run.model, X, eps)
    per_point = (time.perf_counter() - t) / max(1, len(X))
    flips, worst = 0, 0.0
    for k, (x, v) in enumerate(zip(X, verdicts)):
        if not v.certified:
            continue
        shift = random_attack(run.model, x, delta, trials, seed + k, run.box)
        worst = max(worst, shift)
        if shift >= abs(v.logit):
            flips += 1
    return {"flips": flips, "certified": sum(v.certified for v in verdicts),
            "worst_shift": worst, "latency_s": per_point}


def run_fair(eps: float, seed: int = 0, overrides: dict | None = None,
             data: Dataset | None = None) -> RunResult:
    ds = data or load_fairness()
    n_train = int(0.8 * len(ds.y))
    tr, te = ds.split(n_train)
    prop = fairness(ds.box, ds.protected, eps)
    m = ds.X.shape[1]
    model = SmileModel.init(m, 8, (32, 32), aux_hidden=4, seed=seed)
    t = time.perf_counter()
    report = train(model, tr.X, tr.y, prop, ds.box, _config(FAIR_CONFIG, seed, overrides))
    seconds = time.perf_counter() - t
    logits = model.predict(te.X)
    metrics = {"acc": accuracy(te.y, logits),
               "cfvar": max(counterfactual_variation(model, te.X, p) for p in ds.protected),
               "violBound": report.viol_bound}
    return RunResult(f"fair_e{eps}", model, report, prop, ds.box, metrics, seconds)
