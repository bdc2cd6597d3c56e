"""Datasets: synthetic generators and a schema-driven CSV loader."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..property import InputBox


class DataError(ValueError):
    """Malformed or unusable data file."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str
    box: InputBox
    feature_names: list = field(default_factory=list)
    protected: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.task not in ("regression", "binary"):
            raise DataError(f"unknown task {self.task!r}")
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DataError("X must be N x m with one target per row")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    @property
    def binary(self) -> list[int]:
        return sorted(self.box.binary)

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        """Leading ``n_train`` rows versus the rest."""
        a = Dataset(self.X[:n_train], self.y[:n_train], self.task, self.box,
                    list(self.feature_names), list(self.protected))
        b = Dataset(self.X[n_train:], self.y[n_train:], self.task, self.box,
                    list(self.feature_names), list(self.protected))
        return a, b

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*self.feature_names, "y"])
            for row, target in zip(self.X, self.y):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def gen_monotonic(alpha: float, omega: float, n: int = 2000, low: float = -10.0,
                  high: float = 10.0, seed: int = 0) -> Dataset:
    """``y = x + alpha sin(omega x)`` with ``x ~ U[low, high]``, both standardized.

    The box is the standardized image of ``[low, high]``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, n)
    y = x + alpha * np.sin(omega * x)
    mx, sx = x.mean(), x.std()
    my, sy = y.mean(), y.std()
    box = InputBox([(low - mx) / sx], [(high - mx) / sx])
    ds = Dataset(((x - mx) / sx)[:, None], (y - my) / sy, "regression", box, ["x"])
    ds.scaling = {"x_mean": mx, "x_std": sx, "y_mean": my, "y_std": sy}
    return ds


def gen_moons(n: int = 3000, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles rescaled into the unit square."""
    from sklearn.datasets import make_moons

    if n <= 0:
        raise ValueError("n must be positive")
    X, y = make_moons(n_samples=n, noise=noise, random_state=seed)
    lo, hi = X.min(axis=0), X.max(axis=0)
    X = (X - lo) / (hi - lo)
    return Dataset(X, y.astype(float), "binary", InputBox.unit(2), ["x0", "x1"])


def gen_fairness(n: int = 1500, seed: int = 0) -> Dataset:
    """Tabular binary task whose label leans on a protected attribute.

    Columns: ``age`` and ``income`` (uniform), ``score`` (noisy), ``group``
    (protected, binary). The label is a noisy logistic function of the numeric
    columns plus ``0.8 * group``.
    """
    rng = np.random.default_rng(seed)
    age = rng.uniform(0, 1, n)
    income = rng.uniform(0, 1, n)
    group = rng.integers(0, 2, n).astype(float)
    score = np.clip(0.5 * income + 0.3 * age + 0.2 * rng.uniform(0, 1, n), 0, 1)
    logit = 4.0 * (income - 0.5) + 2.0 * (score - 0.5) - 1.5 * (age - 0.5) + 0.8 * (group - 0.5)
    y = (rng.uniform(0, 1, n) < 1.0 / (1.0 + np.exp(-logit))).astype(float)
    X = np.stack([age, income, score, group], axis=1)
    return Dataset(X, y, "binary", InputBox.unit(4, binary=[3]),
                   ["age", "income", "score", "group"], [3])


# ----------------------------------------------------------------- loading

def load_schema(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_csv(path, schema: dict | None = None) -> Dataset:
    """Read a CSV into a :class:`Dataset`.

    ``schema`` keys: ``target`` (default ``"y"``), ``task`` (``regression`` or
    ``binary``), ``numeric``, ``categorical``, ``protected`` (column names),
    ``missing`` (``"drop_rows"`` or ``"drop_columns"``) and ``scale``
    (min-max scale numerics, default true). Without a schema every non-target
    column is numeric, values are taken as-is and a 0/1 column is binary.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise DataError("ragged rows")
    raw = schema is None
    schema = dict(schema or {})
    target = schema.get("target", "y")
    if target not in header:
        raise DataError(f"target column {target!r} not found")
    categorical = list(schema.get("categorical", []))
    numeric = list(schema.get("numeric", [h for h in header if h != target and h not in categorical]))
    protected = list(schema.get("protected", []))
    for name in [*numeric, *categorical, *protected]:
        if name not in header:
            raise DataError(f"unknown column {name!r}")

    table = {h: [r[i].strip() for r in body] for i, h in enumerate(header)}
    used = [*numeric, *categorical, target]
    missing = {h: [v in ("", "NA", "NaN", "nan", "?") for v in table[h]] for h in used}
    if schema.get("missing", "drop_rows") == "drop_columns":
        numeric = [h for h in numeric if not any(missing[h])]
        categorical = [h for h in categorical if not any(missing[h])]
        keep = [not m for m in missing[target]]
    else:
        keep = [not any(missing[h][i] for h in used) for i in range(len(body))]
    if not any(keep):
        raise DataError("no rows left after dropping missing values")

    def column(name):
        vals = [v for v, k in zip(table[name], keep) if k]
        try:
            return np.array([float(v) for v in vals])
        except ValueError as exc:
            raise DataError(f"non-numeric value in column {name!r}") from exc

    cols, names, binary, prot_idx = [], [], [], []
    lows, highs = [], []
    for name in numeric:
        v = column(name)
        is_bin = bool(np.all((v == 0) | (v == 1)))
        if schema.get("scale", not raw) and not is_bin:
            lo, hi = v.min(), v.max()
            v = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
        if is_bin:
            binary.append(len(cols))
            lows.append(0.0)
            highs.append(1.0)
        else:
            lows.append(float(v.min()))
            highs.append(float(v.max()) if v.max() > v.min() else float(v.min()) + 1.0)
        if name in protected:
            prot_idx.append(len(cols))
        cols.append(v)
        names.append(name)
    for name in categorical:
        vals = [v for v, k in zip(table[name], keep) if k]
        for level in sorted(set(vals)):
            if name in protected:
                prot_idx.append(len(cols))
            binary.append(len(cols))
            cols.append(np.array([1.0 if v == level else 0.0 for v in vals]))
            names.append(f"{name}={level}")
            lows.append(0.0)
            highs.append(1.0)
    if not cols:
        raise DataError("no feature columns")
    y = column(target)
    task = schema.get("task") or ("binary" if np.all((y == 0) | (y == 1)) else "regression")
    if task == "binary" and not np.all((y == 0) | (y == 1)):
        raise DataError("binary task needs 0/1 targets")
    box = InputBox(lows, highs, frozenset(binary))
    return Dataset(np.stack(cols, axis=1), y, task, box, names, prot_idx)


def shipped_path(name: str) -> Path:
    return Path(str(resources.files("smile") / "data" / name))


def load_fairness() -> Dataset:
    """The bundled synthetic fairness table."""
    return load_csv(shipped_path("fairness.csv"), load_schema(shipped_path("fairness.json")))
