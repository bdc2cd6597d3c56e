"""Rejection-based defense for certified-robust classifiers, and a sampling attack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import SmileModel
from ..property import InputBox


@dataclass(frozen=True)
class Verdict:
    certified: bool
    label: int | None
    logit: float

    @property
    def outcome(self) -> str:
        return "Certified" if self.certified else "Warning"


def rejection_defense(model: SmileModel, x, eps: float) -> Verdict:
    """Certify the predicted label when the logit lies outside ``[-eps, eps]``.

    Sound only for a model certified for a robustness property with this
    ``eps``: a perturbation within ``delta`` moves the logit by at most ``eps``
    and so cannot cross zero.
    """
    logit = float(model.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])
    if abs(logit) > eps:
        return Verdict(True, int(logit > 0), logit)
    return Verdict(False, None, logit)


def defend_batch(model: SmileModel, X, eps: float) -> list[Verdict]:
    logits = model.predict(np.asarray(X, dtype=np.float64))
    return [Verdict(True, int(v > 0), float(v)) if abs(v) > eps else Verdict(False, None, float(v))
            for v in logits]


def random_attack(model: SmileModel, x, delta: float, trials: int = 10_000, seed: int = 0,
                  box: InputBox | None = None) -> float:
    """Largest ``|f(x + eta) - f(x)|`` found over sampled ``||eta||_inf <= delta``.

    Samples every sign corner of the perturbation cube when there are at most
    ``trials`` of them, then fills the remaining budget uniformly. Perturbed
    points are clipped to ``box`` when given.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if delta == 0 or trials <= 0:
        return 0.0
    m = x.size
    rng = np.random.default_rng(seed)
    parts = []
    if 2 ** m <= trials:
        corners = ((np.arange(2 ** m)[:, None] >> np.arange(m)) & 1) * 2.0 - 1.0
        parts.append(delta * corners)
    rest = trials - sum(len(p) for p in parts)
    if rest > 0:
        parts.append(rng.uniform(-delta, delta, size=(rest, m)))
    pts = x + np.concatenate(parts)
    if box is not None:
        pts = np.clip(pts, box.low, box.high)
    base = float(model.predict(x.reshape(1, -1))[0])
    return float(np.max(np.abs(model.predict(pts) - base)))
