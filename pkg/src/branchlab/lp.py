"""Bounded-variable primal simplex for LP relaxations.

The LP solved is ``min c^T x  s.t.  A x <= b,  l <= x <= u`` with slacks
appended, so the working problem is ``[A I] (x, s) = b`` with ``s >= 0``.
Nonbasic variables sit at one of their bounds (or at zero when free).

Infeasible starting bases, both cold and warm, are handled the same way: for
every basic variable outside its bounds an artificial column is added, the
violating variable is moved to the violated bound and the artificial takes its
place in the basis. Phase 1 drives the artificials to zero; they are then
fixed at ``[0, 0]`` and phase 2 optimizes the real objective.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_py import AT_LOWER, AT_UPPER, BASIC, FREE, ITER_LIMIT, UNBOUNDED
from .milp import MilpInstance

log = logging.getLogger(__name__)

TOL_FEAS = 1e-7
TOL_PIV = 1e-10
TOL_DUAL = 1e-9


class NumericalBreakdown(RuntimeError):
    """The simplex could not reach a trustworthy answer (cycling or ill-conditioning)."""


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class WarmBasis:
    """Final basis of a solve: basic column indices and the state of every column."""

    basic: np.ndarray
    state: np.ndarray


@dataclass(frozen=True, eq=False)
class LpOutcome:
    status: LpStatus
    x_star: np.ndarray | None
    objective: float
    iterations: int
    basis: WarmBasis | None = None

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _infeasible(iterations=0) -> LpOutcome:
    return LpOutcome(LpStatus.INFEASIBLE, None, np.inf, iterations)


class SimplexSolver:
    """Holds the mutable tableau of one solve. Not thread-safe; use one per thread."""

    def __init__(self, inst: MilpInstance, trace: bool = False):
        self.inst = inst
        self.trace = trace
        A = inst.dense_A()
        m, n = A.shape
        self.m, self.n = m, n
        self.cols = np.hstack([A, np.eye(m)])
        self.lo = np.concatenate([inst.l, np.zeros(m)])
        self.hi = np.concatenate([inst.u, np.full(m, np.inf)])
        self.cost = np.concatenate([inst.c, np.zeros(m)])
        self.counters = np.zeros(3, dtype=np.int64)
        self.max_iter = 100 * (m + n) + 1000
        self.bland_after = 3 * (m + n)

    # -- starting bases ---------------------------------------------------

    def _nonbasic_position(self, j, preferred):
        lo, hi = self.lo[j], self.hi[j]
        if preferred == AT_UPPER and np.isfinite(hi):
            return AT_UPPER, hi
        if np.isfinite(lo):
            return AT_LOWER, lo
        if np.isfinite(hi):
            return AT_UPPER, hi
        return FREE, 0.0

    def cold_start(self):
        m, n = self.m, self.n
        self.T = self.cols.copy()
        self.basis = np.arange(n, n + m, dtype=np.int64)
        self.state = np.full(n + m, BASIC, dtype=np.int8)
        self.x = np.zeros(n + m)
        for j in range(n):
            self.state[j], self.x[j] = self._nonbasic_position(j, AT_LOWER)
        self.x[n:] = self.inst.b - self.cols[:, :n] @ self.x[:n]

    def warm_start(self, warm: WarmBasis) -> bool:
        basis = np.array(warm.basic, dtype=np.int64)
        B = self.cols[:, basis]
        try:
            if self.m and np.linalg.cond(B) > 1e12:
                return False
            T = np.linalg.solve(B, self.cols) if self.m else self.cols.copy()
        except np.linalg.LinAlgError:
            return False
        self.T = np.ascontiguousarray(T)
        self.basis = basis
        self.state = np.array(warm.state, dtype=np.int8)
        self.x = np.zeros(self.n + self.m)
        nonbasic = np.flatnonzero(self.state != BASIC)
        for j in nonbasic:
            self.state[j], self.x[j] = self._nonbasic_position(j, self.state[j])
        rhs = self.inst.b - self.cols[:, nonbasic] @ self.x[nonbasic]
        self.x[basis] = np.linalg.solve(B, rhs) if self.m else 0.0
        return True

    # -- phases -----------------------------------------------------------

    def _add_artificials(self):
        xb = self.x[self.basis]
        above = xb > self.hi[self.basis] + TOL_FEAS
        below = xb < self.lo[self.basis] - TOL_FEAS
        rows = np.flatnonzero(above | below)
        self.art = np.arange(self.n + self.m, self.n + self.m + len(rows))
        if not len(rows):
            self.art_cols = np.zeros((self.m, 0))
            return
        k = len(rows)
        self.T = np.ascontiguousarray(np.hstack([self.T, np.zeros((self.m, k))]))
        self.lo = np.concatenate([self.lo, np.zeros(k)])
        self.hi = np.concatenate([self.hi, np.full(k, np.inf)])
        self.cost = np.concatenate([self.cost, np.zeros(k)])
        self.x = np.concatenate([self.x, np.zeros(k)])
        self.state = np.concatenate([self.state, np.full(k, AT_LOWER, dtype=np.int8)])
        art_cols = np.zeros((self.m, k))
        for t, r in enumerate(rows):
            a = self.art[t]
            b = self.basis[r]
            sign = 1.0 if above[r] else -1.0
            bound = self.hi[b] if above[r] else self.lo[b]
            art_cols[:, t] = sign * self.cols[:, b]
            self.T[r, :] *= sign
            self.T[r, a] = 1.0
            self.x[a] = sign * (self.x[b] - bound)
            self.x[b] = bound
            self.state[b] = AT_UPPER if above[r] else AT_LOWER
            self.state[a] = BASIC
            self.basis[r] = a
        self.art_cols = art_cols

    def _run_phase(self, cost, phase):
        d = cost - cost[self.basis] @ self.T
        d[self.basis] = 0.0
        d = np.ascontiguousarray(d)
        args = (self.T, d, self.x, self.lo, self.hi, self.basis, self.state)
        if not self.trace:
            return kernels.simplex_iterate(*args, self.max_iter, self.bland_after, TOL_DUAL, TOL_PIV,
                                           self.counters)
        while True:
            status = kernels.simplex_iterate(*args, min(self.counters[0] + 1, self.max_iter),
                                             self.bland_after, TOL_DUAL, TOL_PIV, self.counters)
            log.debug("phase=%d iter=%d obj=%.12g bland=%d", phase, self.counters[0],
                      float(cost @ self.x), self.counters[2])
            if status != ITER_LIMIT or self.counters[0] >= self.max_iter:
                return status

    def run(self) -> LpOutcome:
        if self.inst.box_infeasible:
            return _infeasible()
        self._add_artificials()
        if len(self.art):
            phase1 = np.zeros(len(self.cost))
            phase1[self.art] = 1.0
            status = self._run_phase(phase1, 1)
            if status != 0:
                raise NumericalBreakdown(f"phase 1 stopped with status {status}")
            scale = max(1.0, float(np.max(np.abs(self.inst.b), initial=0.0)))
            if self.x[self.art].sum() > TOL_FEAS * scale:
                return _infeasible(int(self.counters[0]))
            self.hi[self.art] = 0.0
            nb_art = self.art[self.state[self.art] != BASIC]
            self.x[nb_art] = 0.0
            self.state[nb_art] = AT_LOWER
        status = self._run_phase(self.cost, 2)
        if status == UNBOUNDED:
            return LpOutcome(LpStatus.UNBOUNDED, None, -np.inf, int(self.counters[0]))
        if status == ITER_LIMIT:
            raise NumericalBreakdown("iteration limit reached")
        return self._finish()

    def _finish(self) -> LpOutcome:
        n, m = self.n, self.m
        cols = np.hstack([self.cols, self.art_cols])
        nonbasic = np.flatnonzero(self.state != BASIC)
        if m:
            rhs = self.inst.b - cols[:, nonbasic] @ self.x[nonbasic]
            try:
                self.x[self.basis] = np.linalg.solve(cols[:, self.basis], rhs)
            except np.linalg.LinAlgError:
                pass
        x = self.x[:n].copy()
        l, u = self.inst.l, self.inst.u
        if np.any(x < l - 10 * TOL_FEAS) or np.any(x > u + 10 * TOL_FEAS):
            raise NumericalBreakdown("solution violates variable bounds")
        np.clip(x, l, u, out=x)
        resid = self.cols[:, :n] @ x - self.inst.b if m else np.zeros(0)
        if np.any(resid > TOL_FEAS * (1.0 + np.abs(self.inst.b))):
            raise NumericalBreakdown(f"constraint residual {resid.max():.3g} exceeds tolerance")
        warm = None
        if not np.any(self.basis >= n + m):
            warm = WarmBasis(self.basis.copy(), self.state[: n + m].copy())
        x.setflags(write=False)
        return LpOutcome(LpStatus.OPTIMAL, x, float(self.inst.c @ x), int(self.counters[0]), warm)


def solve_lp(inst: MilpInstance, trace: bool = False) -> LpOutcome:
    """Solve the LP relaxation of ``inst`` from a slack basis."""
    solver = SimplexSolver(inst, trace=trace)
    if inst.box_infeasible:
        return _infeasible()
    solver.cold_start()
    return solver.run()


def solve_child(parent: LpOutcome, child: MilpInstance, trace: bool = False) -> LpOutcome:
    """Solve ``child`` starting from the final basis of ``parent``.

    ``child`` must share ``A``, ``b`` and ``c`` with the parent's instance. Falls
    back to a cold solve when no usable basis is available.
    """
    if child.box_infeasible:
        return _infeasible()
    if not parent.optimal or parent.basis is None:
        return solve_lp(child, trace=trace)
    solver = SimplexSolver(child, trace=trace)
    if not solver.warm_start(parent.basis):
        return solve_lp(child, trace=trace)
    return solver.run()
