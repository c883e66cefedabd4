"""Best-first branch-and-bound over LP relaxations with a pluggable branching policy."""

from __future__ import annotations

import enum
import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import LpOutcome, LpStatus, solve_child, solve_lp
from .milp import MilpInstance

log = logging.getLogger(__name__)

TOL_INT = 1e-6
TOL_GAP = 1e-9
# Slack allowed when asserting bound monotonicity between LPs at runtime.
_MONOTONE_SLACK = 1e-6

# Deterministic "work clock": seconds charged per simplex iteration and per GNN message.
WORK_PER_ITERATION = 1e-4
WORK_PER_MESSAGE = 1e-7


def work_seconds(lp_iterations: int, policy_work: int) -> float:
    return WORK_PER_ITERATION * lp_iterations + WORK_PER_MESSAGE * policy_work


class NodeStatus(str, enum.Enum):
    OPEN = "open"
    CLOSED_INFEASIBLE = "closed_infeasible"
    CLOSED_INTEGRAL = "closed_integral"
    CLOSED_BOUND = "closed_bound"


@dataclass(frozen=True)
class Candidates:
    """Integer variables with fractional LP values, in ascending index order."""

    indices: tuple[int, ...] = ()
    values: tuple[float, ...] = ()

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(zip(self.indices, self.values))

    def value_of(self, var: int) -> float:
        return self.values[self.indices.index(var)]


def fractional_candidates(outcome: LpOutcome, inst: MilpInstance, tol_int: float = TOL_INT) -> Candidates:
    """Integer-constrained variables whose LP value is more than ``tol_int`` from an integer."""
    if not outcome.optimal:
        raise ValueError("candidates are only defined for an optimal LP")
    idx = np.array(inst.int_vars, dtype=np.int64)
    if not len(idx):
        return Candidates()
    vals = outcome.x_star[idx]
    frac = np.abs(vals - np.round(vals)) > tol_int
    return Candidates(tuple(int(j) for j in idx[frac]), tuple(float(v) for v in vals[frac]))


@dataclass(eq=False)
class BnbNode:
    node_id: int
    parent_id: int | None
    bounds: dict[int, tuple[float, float]]
    depth: int
    lp: LpOutcome
    status: NodeStatus = NodeStatus.OPEN
    candidates: Candidates = field(default_factory=Candidates)
    branched_var: int | None = None

    def local_instance(self, root: MilpInstance) -> MilpInstance:
        if not self.bounds:
            return root
        l = root.l.copy()
        u = root.u.copy()
        for j, (lo, hi) in self.bounds.items():
            l[j], u[j] = lo, hi
        return root.with_bounds(l, u)


@dataclass
class SolveStats:
    node_count: int = 0
    solve_time: float = 0.0
    incumbent_objective: float = math.inf
    optimality_proven: bool = False
    policy_calls: int = 0
    lp_solves: int = 0
    lp_iterations: int = 0
    policy_work: int = 0
    status: str = "optimal"

    @property
    def limit_reached(self) -> bool:
        return self.status == "limit"

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "node_count": self.node_count,
            "solve_time": self.solve_time,
            "incumbent_objective": _json_float(self.incumbent_objective),
            "optimality_proven": self.optimality_proven,
            "policy_calls": self.policy_calls,
            "lp_solves": self.lp_solves,
            "lp_iterations": self.lp_iterations,
            "policy_work": self.policy_work,
        }


def _json_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


class NodeContext:
    """Everything a policy may look at when choosing a branching variable.

    Child LPs requested through :meth:`child` are cached so the engine reuses
    what strong branching already computed.
    """

    def __init__(self, instance: MilpInstance, outcome: LpOutcome, candidates: Candidates | None = None,
                 node: BnbNode | None = None):
        self.instance = instance
        self.outcome = outcome
        self.candidates = fractional_candidates(outcome, instance) if candidates is None else candidates
        self.node = node
        self.lp_solves = 0
        self.lp_iterations = 0
        self._children: dict[tuple[int, bool], tuple[MilpInstance, LpOutcome]] = {}

    @classmethod
    def root(cls, instance: MilpInstance) -> "NodeContext":
        return cls(instance, solve_lp(instance))

    def child_instance(self, var: int, up: bool) -> MilpInstance:
        v = self.candidates.value_of(var)
        l = self.instance.l.copy()
        u = self.instance.u.copy()
        if up:
            l[var] = max(l[var], math.ceil(v))
        else:
            u[var] = min(u[var], math.floor(v))
        return self.instance.with_bounds(l, u)

    def child(self, var: int, up: bool) -> LpOutcome:
        key = (var, up)
        if key not in self._children:
            inst = self.child_instance(var, up)
            out = solve_child(self.outcome, inst)
            self.lp_solves += 1
            self.lp_iterations += out.iterations
            self._children[key] = (inst, out)
        return self._children[key][1]


class BranchingPolicy:
    """Base class: ``select`` returns one index from ``ctx.candidates``."""

    name = "policy"

    def reset(self, instance: MilpInstance) -> None:
        pass

    def select(self, ctx: NodeContext) -> int:
        raise NotImplementedError

    def on_branch(self, ctx: NodeContext, var: int, up: LpOutcome, down: LpOutcome) -> None:
        pass

    @property
    def work(self) -> int:
        return 0


class BranchAndBound:
    """One search over one instance. Not thread-safe."""

    def __init__(self, inst: MilpInstance, policy: BranchingPolicy, on_node=None, on_iteration=None):
        self.inst = inst
        self.policy = policy
        self.on_node = on_node
        self.on_iteration = on_iteration
        self.stats = SolveStats()
        self.incumbent = math.inf
        self.best_x = None
        self._heap: list[tuple[float, int, BnbNode]] = []
        self._next_id = 0

    # -- node bookkeeping ---------------------------------------------------

    def _new_node(self, parent: BnbNode | None, bounds, lp: LpOutcome, local: MilpInstance) -> BnbNode:
        node = BnbNode(
            node_id=self._next_id,
            parent_id=None if parent is None else parent.node_id,
            bounds=bounds,
            depth=0 if parent is None else parent.depth + 1,
            lp=lp,
        )
        self._next_id += 1
        self.stats.node_count += 1
        if lp.status is LpStatus.INFEASIBLE:
            node.status = NodeStatus.CLOSED_INFEASIBLE
        elif lp.optimal:
            node.candidates = fractional_candidates(lp, local)
            if not len(node.candidates):
                node.status = NodeStatus.CLOSED_INTEGRAL
                if lp.objective < self.incumbent:
                    self.incumbent = lp.objective
                    self.best_x = lp.x_star
            elif lp.objective >= self.incumbent - TOL_GAP:
                node.status = NodeStatus.CLOSED_BOUND
        if node.status is NodeStatus.OPEN:
            heapq.heappush(self._heap, (lp.objective, node.node_id, node))
        else:
            self._emit(node)
        return node

    def _emit(self, node: BnbNode) -> None:
        if self.on_node is not None:
            self.on_node({
                "id": node.node_id,
                "parent": node.parent_id,
                "depth": node.depth,
                "status": node.status.value,
                "lp_obj": _json_float(node.lp.objective),
                "branched_var": node.branched_var,
            })

    def branch(self, node: BnbNode, var: int, frac_value: float, ctx: NodeContext) -> tuple[BnbNode, BnbNode]:
        """Create the up child (``x_var >= ceil``) and down child (``x_var <= floor``)."""
        lo, hi = node.bounds.get(var, (self.inst.l[var], self.inst.u[var]))
        up_bounds = dict(node.bounds)
        up_bounds[var] = (max(lo, math.ceil(frac_value)), hi)
        down_bounds = dict(node.bounds)
        down_bounds[var] = (lo, min(hi, math.floor(frac_value)))
        up_lp, down_lp = ctx.child(var, True), ctx.child(var, False)
        for child_lp in (up_lp, down_lp):
            if child_lp.optimal and child_lp.objective < node.lp.objective - _MONOTONE_SLACK * (1 + abs(node.lp.objective)):
                raise AssertionError(
                    f"child LP bound {child_lp.objective} below parent {node.lp.objective}")
        up = self._new_node(node, up_bounds, up_lp, ctx._children[(var, True)][0])
        down = self._new_node(node, down_bounds, down_lp, ctx._children[(var, False)][0])
        return up, down

    # -- main loop ------------------------------------------------------------

    def run(self, max_nodes: int | None = None, max_seconds: float | None = None, clock: str = "wall"):
        """Search until proven optimal or a limit is hit.

        ``clock="work"`` measures time with :func:`work_seconds` instead of the
        wall clock, which makes limits and reported times deterministic.
        """
        if clock not in ("wall", "work"):
            raise ValueError(f"unknown clock {clock!r}")
        t0 = time.perf_counter()
        stats = self.stats

        def elapsed():
            if clock == "work":
                return work_seconds(stats.lp_iterations, self.policy.work)
            return time.perf_counter() - t0

        self.policy.reset(self.inst)
        root_lp = solve_lp(self.inst)
        stats.lp_solves += 1
        stats.lp_iterations += root_lp.iterations
        if root_lp.status is LpStatus.UNBOUNDED:
            stats.node_count = 1
            stats.status = "unbounded"
            stats.incumbent_objective = -math.inf
            stats.solve_time = elapsed()
            return stats, None
        self._new_node(None, {}, root_lp, self.inst)

        while self._heap:
            if max_nodes is not None and stats.node_count + 2 > max_nodes:
                stats.status = "limit"
                break
            if max_seconds is not None and elapsed() > max_seconds:
                stats.status = "limit"
                break
            obj, _, node = heapq.heappop(self._heap)
            if obj >= self.incumbent - TOL_GAP:
                node.status = NodeStatus.CLOSED_BOUND
                self._emit(node)
                continue
            if self.on_iteration is not None:
                self.on_iteration(obj, self.incumbent)
            local = node.local_instance(self.inst)
            ctx = NodeContext(local, node.lp, node.candidates, node)
            var = self.policy.select(ctx)
            stats.policy_calls += 1
            if var not in node.candidates.indices:
                raise ValueError(f"policy {self.policy.name} chose non-candidate {var}")
            node.branched_var = var
            up, down = self.branch(node, var, node.candidates.value_of(var), ctx)
            stats.lp_solves += ctx.lp_solves
            stats.lp_iterations += ctx.lp_iterations
            self.policy.on_branch(ctx, var, up.lp, down.lp)
            self._emit(node)

        if stats.status != "limit":
            stats.optimality_proven = True
            stats.status = "optimal" if math.isfinite(self.incumbent) else "infeasible"
        else:
            for _, _, node in sorted(self._heap, key=lambda t: t[1]):
                self._emit(node)
        if math.isfinite(self.incumbent) and self.incumbent < root_lp.objective - _MONOTONE_SLACK * (1 + abs(root_lp.objective)):
            raise AssertionError("incumbent below the root relaxation bound")
        stats.incumbent_objective = self.incumbent
        stats.policy_work = self.policy.work
        stats.solve_time = elapsed()
        return stats, self.best_x


def solve(inst: MilpInstance, policy: BranchingPolicy, max_nodes: int | None = None,
          max_seconds: float | None = None, on_node=None, on_iteration=None, clock: str = "wall"):
    """Run branch-and-bound; returns ``(SolveStats, best solution or None)``.

    Hitting a limit is not an error: ``stats.status == "limit"`` and
    ``optimality_proven`` is false.
    """
    return BranchAndBound(inst, policy, on_node, on_iteration).run(max_nodes, max_seconds, clock)
