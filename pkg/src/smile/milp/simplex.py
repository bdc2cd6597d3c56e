"""Dense bounded-variable dual simplex.

Every row ``a.x (<=|=|>=) b`` gets a slack ``s`` with ``a.x + s = b``; the
slack bounds encode the sense. Structural variables are boxed, so the
all-slack basis with each structural parked at its cost-preferred bound is
dual feasible and no phase one is needed. Branch-and-bound children reuse the
parent basis: only bounds of a basic variable change, so dual feasibility
survives and a handful of dual pivots restore primal feasibility.

Anti-cycling: after ``STALL_LIMIT`` pivots without strict decrease of the dual
objective the method switches to Bland's smallest-index rule until progress
resumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import EQ, GE, LE, MilpProblem

PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-8
STALL_LIMIT = 30
REFACTOR_EVERY = 100


class UnboundedError(RuntimeError):
    """Raised when an LP is unbounded (impossible for boxed variables)."""


@dataclass
class Basis:
    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "cutoff"
    x: np.ndarray | None
    objective: float
    basis: Basis | None
    pivots: int
    work: int
    # final (basic, T, beta, at_upper, d); lets a child node skip refactorization
    state: tuple | None = None


class DualSimplex:
    """LP engine for ``max c.x`` over fixed rows, re-solvable under new variable bounds."""

    def __init__(self, A: np.ndarray, senses, rhs: np.ndarray, c: np.ndarray):
        self.M, self.N = A.shape
        self.A = np.hstack([A, np.eye(self.M)])
        self.rhs = np.asarray(rhs, dtype=np.float64)
        self.c = np.concatenate([np.asarray(c, dtype=np.float64), np.zeros(self.M)])
        slack_lo = np.zeros(self.M)
        slack_hi = np.zeros(self.M)
        for i, s in enumerate(senses):
            if s == LE:
                slack_hi[i] = np.inf
            elif s == GE:
                slack_lo[i] = -np.inf
            elif s != EQ:
                raise ValueError(f"bad sense {s!r}")
        self.slack_lo, self.slack_hi = slack_lo, slack_hi
        self.cost_per_pivot = max(1, self.M * (self.N + self.M))

    @classmethod
    def from_problem(cls, problem: MilpProblem) -> "DualSimplex":
        A, senses, rhs, c, _, _ = problem.dense()
        return cls(A, senses, rhs, c)

    # ------------------------------------------------------------------

    def _factor(self, basic: np.ndarray):
        B = self.A[:, basic]
        T = np.linalg.solve(B, self.A)
        beta = np.linalg.solve(B, self.rhs)
        T[np.abs(T) < 1e-13] = 0.0
        return T, beta

    def solve(self, lower, upper, basis: Basis | None = None,
              cutoff: float | None = None, max_pivots: int | None = None,
              state: tuple | None = None) -> LPResult:
        M, N = self.M, self.N
        L = np.concatenate([np.asarray(lower, dtype=np.float64), self.slack_lo])
        U = np.concatenate([np.asarray(upper, dtype=np.float64), self.slack_hi])
        work = 0
        if np.any(L[:N] > U[:N] + PRIMAL_TOL):
            return LPResult("infeasible", None, -np.inf, None, 0, 0)
        U[:N] = np.maximum(U[:N], L[:N])

        if state is not None:
            state = tuple(a.copy() for a in state)
        elif basis is not None:
            state = self._warm(basis, L, U)
            work += M * M * (N + M) // 3 + 1
        if state is None:
            basic = np.arange(N, N + M)
            T, beta = self.A.copy(), self.rhs.copy()
            at_upper = np.zeros(N + M, dtype=bool)
            d = self.c.copy()
            at_upper[:N] = d[:N] > 0.0
            state = (basic, T, beta, at_upper, d)
        basic, T, beta, at_upper, d = state

        is_basic = np.zeros(N + M, dtype=bool)
        is_basic[basic] = True
        fixed = L == U
        if max_pivots is None:
            max_pivots = 50 * (N + M) + 1000
        pivots = 0
        stall = 0
        bland = False
        best_obj = np.inf
        since_refactor = 0

        while True:
            xn = np.where(at_upper, U, L)
            xn[is_basic] = 0.0
            xn[~np.isfinite(xn)] = 0.0
            xb = beta - T @ xn
            x = xn
            x[basic] = xb
            obj = float(self.c @ x)
            if cutoff is not None and obj <= cutoff:
                return LPResult("cutoff", None, obj, None, pivots, work)

            lb, ub = L[basic], U[basic]
            scale_lb = PRIMAL_TOL * np.maximum(1.0, np.abs(np.where(np.isfinite(lb), lb, 0.0)))
            scale_ub = PRIMAL_TOL * np.maximum(1.0, np.abs(np.where(np.isfinite(ub), ub, 0.0)))
            below = lb - xb
            above = xb - ub
            infeas = np.maximum(np.where(below > scale_lb, below, 0.0),
                                np.where(above > scale_ub, above, 0.0))
            if not np.any(infeas > 0.0):
                xs = np.clip(x[:N], L[:N], U[:N])
                return LPResult("optimal", xs, float(self.c[:N] @ xs),
                                Basis(basic.copy(), at_upper.copy()), pivots, work,
                                (basic, T, beta, at_upper, d))

            if obj < best_obj - 1e-12 * max(1.0, abs(best_obj)):
                best_obj = obj
                stall = 0
                bland = False
            else:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True

            candidates = np.flatnonzero(infeas > 0.0)
            if bland:
                r = int(candidates[np.argmin(basic[candidates])])
            else:
                r = int(candidates[np.argmax(infeas[candidates])])
            increase = below[r] > 0.0 and infeas[r] == below[r]

            row = T[r]
            nonbasic_free = ~is_basic & ~fixed
            if increase:
                elig = nonbasic_free & ((~at_upper & (row < -PIVOT_TOL)) |
                                        (at_upper & (row > PIVOT_TOL)))
            else:
                elig = nonbasic_free & ((~at_upper & (row > PIVOT_TOL)) |
                                        (at_upper & (row < -PIVOT_TOL)))
            cols = np.flatnonzero(elig)
            if cols.size == 0:
                return LPResult("infeasible", None, -np.inf, None, pivots, work)
            mag = np.abs(row[cols])
            ratios = np.abs(d[cols]) / mag
            if bland:
                ties = cols[ratios <= ratios.min() + 1e-12]
                q = int(ties.min())
            else:
                # Harris: widen the ratio bound by the dual tolerance, then take the largest pivot
                bound = ((np.abs(d[cols]) + DUAL_TOL) / mag).min()
                ties = cols[ratios <= bound]
                q = int(ties[np.argmax(np.abs(row[ties]))])

            # pivot on (r, q)
            leaving = basic[r]
            piv = T[r, q]
            T[r] /= piv
            beta[r] /= piv
            col = T[:, q].copy()
            col[r] = 0.0
            T -= np.outer(col, T[r])
            beta -= col * beta[r]
            d -= d[q] * T[r]
            d[q] = 0.0
            basic[r] = q
            is_basic[q] = True
            is_basic[leaving] = False
            at_upper[leaving] = not increase
            at_upper[q] = False
            pivots += 1
            since_refactor += 1
            work += self.cost_per_pivot
            if since_refactor >= REFACTOR_EVERY:
                work += M * M * (N + M) // 3
                try:
                    T, beta = self._factor(basic)
                except np.linalg.LinAlgError:
                    # keep the updated tableau when the basis is numerically singular
                    since_refactor = 0
                    continue
                d = self.c - self.c[basic] @ T
                d[basic] = 0.0
                since_refactor = 0
            if pivots > max_pivots:
                raise RuntimeError("dual simplex exceeded its pivot budget")

    def _warm(self, basis: Basis, L, U):
        basic = basis.basic.copy()
        try:
            T, beta = self._factor(basic)
        except np.linalg.LinAlgError:
            return None
        d = self.c - self.c[basic] @ T
        d[basic] = 0.0
        at_upper = basis.at_upper.copy()
        nonbasic = np.ones(self.N + self.M, dtype=bool)
        nonbasic[basic] = False
        boxed = np.isfinite(L) & np.isfinite(U)
        # boxed nonbasics can always take the bound their reduced cost prefers
        want_up = d > DUAL_TOL
        want_lo = d < -DUAL_TOL
        at_upper = np.where(nonbasic & boxed & want_up, True, at_upper)
        at_upper = np.where(nonbasic & boxed & want_lo, False, at_upper)
        bad_up = nonbasic & ~boxed & want_up & ~np.isfinite(U)
        bad_lo = nonbasic & ~boxed & want_lo & ~np.isfinite(L)
        if np.any(bad_up | bad_lo):
            return None
        at_upper = np.where(nonbasic & ~np.isfinite(U), False, at_upper)
        at_upper = np.where(nonbasic & ~np.isfinite(L) & np.isfinite(U), True, at_upper)
        at_upper[basic] = False
        return basic, T, beta, at_upper, d


def simplex(problem: MilpProblem) -> LPResult:
    """Solve the LP relaxation of ``problem`` (integrality marks ignored)."""
    engine = DualSimplex.from_problem(problem)
    return engine.solve(np.array(problem.lower), np.array(problem.upper))
