"""Best-first branch and bound over binary variables, resumable across calls."""

from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .problem import MilpOutcome, MilpProblem, Status
from .simplex import Basis, DualSimplex

INT_TOL = 1e-6
GAP_TOL = 1e-7
FEAS_TOL = 1e-6
# floating-point operations per "work second"; roughly one wall second of dense pivots
WORK_PER_SECOND = 2.0e8
# parent tableaus kept in memory so children can skip refactorization
TABLEAU_CACHE = 64


class WorkClock:
    """Deterministic clock: elapsed time is accumulated solver work."""

    deterministic = True

    def __init__(self, units_per_second: float = WORK_PER_SECOND):
        self.units_per_second = units_per_second

    def elapsed(self, solver: "BranchAndBound", start) -> float:
        return (solver.work - start) / self.units_per_second

    def start(self, solver: "BranchAndBound"):
        return solver.work


class WallClock:
    deterministic = False

    def elapsed(self, solver, start) -> float:
        return time.perf_counter() - start

    def start(self, solver):
        return time.perf_counter()


@dataclass(order=True)
class _Node:
    key: float
    seq: int
    lower: np.ndarray = None
    upper: np.ndarray = None
    basis: Basis | None = None
    depth: int = 0
    parent: int = -1


class BranchAndBound:
    """Maximize a :class:`MilpProblem`.

    The open-node heap and the incumbent persist between :meth:`solve` calls,
    so a caller can resume the search with a larger time limit.
    ``heuristic(x_lp)`` may return a complete assignment; it is accepted as an
    incumbent when it satisfies every constraint within ``FEAS_TOL``.
    """

    def __init__(self, problem: MilpProblem,
                 heuristic: Callable[[np.ndarray], np.ndarray | None] | None = None,
                 clock=None):
        self.problem = problem
        self.engine = DualSimplex.from_problem(problem)
        self.binaries = np.array(problem.binaries, dtype=int)
        self.heuristic = heuristic
        self.clock = clock or WorkClock()
        self.incumbent: np.ndarray | None = None
        self.incumbent_objective = -math.inf
        self.work = 0
        self.nodes = 0
        self.snapshots: list[tuple[int, float, float]] = []
        self._seq = itertools.count()
        self._heap: list[_Node] = []
        self._tableaus: OrderedDict[int, tuple] = OrderedDict()
        root = _Node(-math.inf, next(self._seq), np.array(problem.lower, dtype=float),
                     np.array(problem.upper, dtype=float), None, 0)
        heapq.heappush(self._heap, root)

    # ---------------------------------------------------------------- state

    @property
    def open_nodes(self) -> int:
        return len(self._heap)

    def dual_bound(self) -> float:
        best_open = -self._heap[0].key if self._heap else -math.inf
        return max(best_open, self.incumbent_objective)

    def _cutoff(self) -> float | None:
        if self.incumbent is None:
            return None
        return self.incumbent_objective + GAP_TOL

    def _offer(self, x: np.ndarray, objective: float) -> None:
        if objective > self.incumbent_objective + 1e-12:
            self.incumbent = x.copy()
            self.incumbent_objective = objective
            cut = self.incumbent_objective + GAP_TOL
            if self._heap and any(-n.key <= cut for n in self._heap):
                self._heap = [n for n in self._heap if -n.key > cut]
                heapq.heapify(self._heap)

    # ---------------------------------------------------------------- search

    def solve(self, time_limit: float = math.inf) -> MilpOutcome:
        start = self.clock.start(self)
        while self._heap:
            if self.clock.elapsed(self, start) >= time_limit:
                break
            node = heapq.heappop(self._heap)
            if self.incumbent is not None and -node.key <= self.incumbent_objective + GAP_TOL:
                continue
            self._process(node)
        outcome = self._outcome()
        self.snapshots.append((self.work, outcome.dual_bound, self.incumbent_objective))
        outcome.snapshots = list(self.snapshots)
        return outcome

    def _process(self, node: _Node) -> None:
        self.nodes += 1
        self.work += self.engine.cost_per_pivot
        state = self._tableaus.pop(node.parent, None)
        res = self.engine.solve(node.lower, node.upper, node.basis, cutoff=self._cutoff(),
                                state=state)
        if state is not None:
            # the sibling may still need it
            self._tableaus[node.parent] = state
        self.work += res.work
        if res.status != "optimal":
            return
        x = res.x
        if self.heuristic is not None:
            cand = self.heuristic(x)
            if cand is not None and self.problem.max_violation(cand) <= FEAS_TOL:
                self._offer(cand, self.problem.objective_value(cand))
        if res.objective <= self.incumbent_objective + GAP_TOL:
            return
        frac = np.abs(x[self.binaries] - np.round(x[self.binaries]))
        if frac.size == 0 or frac.max() <= INT_TOL:
            xi = x.copy()
            xi[self.binaries] = np.round(xi[self.binaries])
            self._offer(xi, res.objective)
            return
        # most fractional binary, lowest index on ties
        closeness = np.abs(x[self.binaries] - 0.5)
        k = int(np.flatnonzero(closeness <= closeness.min() + 1e-12)[0])
        j = int(self.binaries[k])
        self._tableaus[node.seq] = res.state
        while len(self._tableaus) > TABLEAU_CACHE:
            self._tableaus.popitem(last=False)
        for value in (1.0, 0.0):
            lo, hi = node.lower.copy(), node.upper.copy()
            lo[j] = hi[j] = value
            heapq.heappush(self._heap, _Node(-res.objective, next(self._seq), lo, hi,
                                             res.basis, node.depth + 1, node.seq))

    def _outcome(self) -> MilpOutcome:
        has = self.incumbent is not None
        if not self._heap:
            status = Status.OPTIMAL if has else Status.INFEASIBLE
        else:
            status = Status.FEASIBLE_TIMEOUT if has else Status.UNKNOWN_TIMEOUT
        bound = self.dual_bound()
        return MilpOutcome(status, self.incumbent.copy() if has else None,
                           self.incumbent_objective if has else None, bound,
                           self.nodes, self.work)


def branch_and_bound(problem: MilpProblem, time_limit: float = math.inf,
                     heuristic=None, clock=None) -> MilpOutcome:
    return BranchAndBound(problem, heuristic, clock).solve(time_limit)
