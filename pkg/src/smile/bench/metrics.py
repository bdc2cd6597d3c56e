"""Evaluation metrics."""

from __future__ import annotations

import numpy as np

from ..model import SmileModel


def r2(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for a constant target")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def accuracy(y_true, logits, threshold: float = 0.0) -> float:
    """Percentage of rows where ``logit >= threshold`` matches the 0/1 label."""
    y_true = np.asarray(y_true).reshape(-1)
    if not np.all((y_true == 0) | (y_true == 1)):
        raise ValueError("accuracy needs 0/1 labels")
    pred = (np.asarray(logits, dtype=np.float64).reshape(-1) >= threshold).astype(int)
    return 100.0 * float(np.mean(pred == y_true))


def counterfactual_variation(model: SmileModel, X, protected: int) -> float:
    """Largest logit change over rows of ``X`` when the binary ``protected`` column flips."""
    X = np.asarray(X, dtype=np.float64)
    col = X[:, protected]
    if not np.all((col == 0) | (col == 1)):
        raise ValueError(f"column {protected} is not binary")
    flipped = X.copy()
    flipped[:, protected] = 1.0 - col
    return float(np.max(np.abs(model.predict(X) - model.predict(flipped))))
