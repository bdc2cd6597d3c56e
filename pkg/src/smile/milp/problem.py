"""Mixed-integer linear problems (maximization, bounded variables, binary marks)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = "<=", "=", ">="


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE_TIMEOUT = "FeasibleTimeout"
    INFEASIBLE = "Infeasible"
    UNKNOWN_TIMEOUT = "UnknownTimeout"


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str


class MilpProblem:
    """Builder for ``max c.x  s.t.  rows, lo <= x <= hi, x_j in {0,1} for binaries``."""

    def __init__(self, name: str = "problem"):
        self.name = name
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.binary: list[bool] = []
        self.rows: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self._index: dict[str, int] = {}

    # -------------------------------------------------------------- build

    def add_var(self, name: str, lower: float, upper: float, binary: bool = False) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        if binary:
            lower, upper = max(0.0, lower), min(1.0, upper)
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise ValueError(f"variable {name!r} needs finite bounds")
        self._index[name] = len(self.names)
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.binary.append(bool(binary))
        return self._index[name]

    def var(self, name: str) -> int:
        return self._index[name]

    def add_row(self, coeffs: dict[int, float], sense: str, rhs: float,
                name: str | None = None) -> None:
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad sense {sense!r}")
        clean = {}
        for j, a in coeffs.items():
            if not 0 <= j < len(self.names):
                raise IndexError(f"row references unknown variable {j}")
            if a != 0.0:
                clean[j] = clean.get(j, 0.0) + float(a)
        self.rows.append(Constraint(clean, sense, float(rhs), name or f"c{len(self.rows)}"))

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self.objective = {int(j): float(a) for j, a in coeffs.items()}

    # ------------------------------------------------------------ queries

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    @property
    def binaries(self) -> list[int]:
        return [j for j, b in enumerate(self.binary) if b]

    def dense(self):
        """(A, sense array, rhs, c, lower, upper) as numpy arrays."""
        A = np.zeros((self.num_rows, self.num_vars))
        for i, row in enumerate(self.rows):
            for j, a in row.coeffs.items():
                A[i, j] = a
        senses = np.array([r.sense for r in self.rows], dtype=object)
        rhs = np.array([r.rhs for r in self.rows])
        c = np.zeros(self.num_vars)
        for j, a in self.objective.items():
            c[j] = a
        return A, senses, rhs, c, np.array(self.lower), np.array(self.upper)

    def objective_value(self, x) -> float:
        return float(sum(a * x[j] for j, a in self.objective.items()))

    def max_violation(self, x, check_integrality: bool = True) -> float:
        x = np.asarray(x, dtype=np.float64)
        worst = float(np.max(np.maximum(np.array(self.lower) - x, x - np.array(self.upper)),
                             initial=0.0))
        for row in self.rows:
            lhs = sum(a * x[j] for j, a in row.coeffs.items())
            if row.sense == LE:
                gap = lhs - row.rhs
            elif row.sense == GE:
                gap = row.rhs - lhs
            else:
                gap = abs(lhs - row.rhs)
            worst = max(worst, gap)
        if check_integrality:
            for j in self.binaries:
                worst = max(worst, abs(x[j] - round(x[j])))
        return worst

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        return self.max_violation(x) <= tol

    # ------------------------------------------------------------ export

    def to_lp(self) -> str:
        """CPLEX LP text, for cross-checking against external solvers."""
        def expr(coeffs: dict[int, float]) -> str:
            if not coeffs:
                return "0 " + self.names[0] if self.names else "0"
            parts = []
            for j, a in sorted(coeffs.items()):
                sign = "-" if a < 0 else "+"
                parts.append(f"{sign} {abs(a):.17g} {self.names[j]}")
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else text

        lines = [f"\\ {self.name}", "Maximize", f" obj: {expr(self.objective)}", "Subject To"]
        for row in self.rows:
            lines.append(f" {row.name}: {expr(row.coeffs)} {row.sense} {row.rhs:.17g}")
        lines.append("Bounds")
        for j, name in enumerate(self.names):
            lines.append(f" {self.lower[j]:.17g} <= {name} <= {self.upper[j]:.17g}")
        bins = [self.names[j] for j in self.binaries]
        if bins:
            lines.append("Binaries")
            lines.append(" " + " ".join(bins))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class MilpOutcome:
    status: Status
    incumbent: np.ndarray | None
    incumbent_objective: float | None
    dual_bound: float
    nodes: int = 0
    work: int = 0
    snapshots: list = field(default_factory=list)

    @property
    def has_incumbent(self) -> bool:
        return self.incumbent is not None
