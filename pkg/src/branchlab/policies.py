"""Variable-selection rules: strong branching, cheap baselines and the GNN adapter."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .bnb import BranchingPolicy, Candidates, NodeContext
from .lp import LpStatus, NumericalBreakdown
from .milp import MilpInstance, encode_graph


class AllSkipped(RuntimeError):
    """Every candidate failed to score."""


@dataclass(frozen=True)
class PolicyConfig:
    """Score function settings.

    ``f_kind`` is ``"product_eps"`` (``max(d+, eps) * max(d-, eps)``) or
    ``"linear_mu"`` (``(1-mu) min + mu max``). An infeasible child gets the
    gain ``cap_factor * (1 + |parent objective|)``.
    """

    f_kind: str = "product_eps"
    mu: float = 1.0 / 6.0
    eps: float = 1e-6
    cap_factor: float = 1e6

    def __post_init__(self):
        if self.f_kind not in ("product_eps", "linear_mu"):
            raise ValueError(f"unknown f_kind {self.f_kind!r}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if not self.eps > 0 or not self.cap_factor > 0:
            raise ValueError("eps and cap_factor must be positive")

    def score(self, d_plus: float, d_minus: float) -> float:
        if self.f_kind == "linear_mu":
            lo, hi = (d_plus, d_minus) if d_plus <= d_minus else (d_minus, d_plus)
            return (1.0 - self.mu) * lo + self.mu * hi
        return max(d_plus, self.eps) * max(d_minus, self.eps)

    def cap(self, parent_objective: float) -> float:
        return self.cap_factor * (1.0 + abs(parent_objective))


@dataclass(frozen=True)
class ScoreEntry:
    index: int
    delta_plus: float
    delta_minus: float
    score: float


class ScoreTable(tuple):
    """Tuple of :class:`ScoreEntry`, one per candidate, in candidate order."""

    @property
    def indices(self) -> list[int]:
        return [e.index for e in self]

    @property
    def scores(self) -> list[float]:
        return [e.score for e in self]


def _gain(outcome, parent_obj: float, cap: float) -> float:
    if outcome.status is LpStatus.INFEASIBLE:
        return cap
    return outcome.objective - parent_obj


def strong_branching(ctx: NodeContext, cfg: PolicyConfig = PolicyConfig(), candidates=None) -> ScoreTable:
    """Solve both children of every candidate and score the objective gains."""
    parent = ctx.outcome.objective
    cap = cfg.cap(parent)
    cands = ctx.candidates.indices if candidates is None else candidates
    if not len(cands):
        raise ValueError("strong branching needs at least one candidate")
    rows = []
    for j in cands:
        try:
            dp = _gain(ctx.child(j, True), parent, cap)
            dm = _gain(ctx.child(j, False), parent, cap)
        except NumericalBreakdown as exc:
            warnings.warn(f"strong branching skipped variable {j}: {exc}", RuntimeWarning, stacklevel=2)
            rows.append(ScoreEntry(j, math.nan, math.nan, -math.inf))
            continue
        rows.append(ScoreEntry(j, dp, dm, cfg.score(dp, dm)))
    return ScoreTable(rows)


def argmax_lowest(indices, scores) -> int:
    """Index with the largest finite score; ties go to the lowest index."""
    best_j, best_s = None, -math.inf
    for j, s in zip(indices, scores):
        if s == -math.inf or math.isnan(s):
            continue
        if best_j is None or s > best_s or (s == best_s and j < best_j):
            best_j, best_s = j, s
    if best_j is None:
        raise AllSkipped("no candidate has a finite score")
    return int(best_j)


def select_argmax(table: ScoreTable) -> int:
    return argmax_lowest(table.indices, table.scores)


def fractionality(value: float) -> float:
    # rounded so that e.g. 0.3 and 0.7 tie despite 1 - 0.7 != 0.3 in binary
    return round(min(value - math.floor(value), math.ceil(value) - value), 12)


def most_fractional(candidates: Candidates) -> int:
    if not len(candidates):
        raise ValueError("no candidates")
    return argmax_lowest(candidates.indices, [fractionality(v) for v in candidates.values])


class StrongBranchingPolicy(BranchingPolicy):
    name = "strong"

    def __init__(self, cfg: PolicyConfig = PolicyConfig()):
        self.cfg = cfg
        self.last_table: ScoreTable | None = None

    def select(self, ctx: NodeContext) -> int:
        self.last_table = strong_branching(ctx, self.cfg)
        return select_argmax(self.last_table)


class MostFractionalPolicy(BranchingPolicy):
    name = "mostfrac"

    def select(self, ctx: NodeContext) -> int:
        return most_fractional(ctx.candidates)


class PseudocostPolicy(BranchingPolicy):
    """Pseudocost branching with strong-branching initialization.

    A variable is reliable once both directions have at least
    ``reliability_k`` recorded observations. Unreliable candidates are strong
    branched (and recorded); reliable ones are scored from per-unit gains.
    Infeasible children are never recorded.
    """

    name = "pseudocost"

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), reliability_k: int = 4):
        if reliability_k < 0:
            raise ValueError("reliability_k must be non-negative")
        self.cfg = cfg
        self.k = reliability_k
        self.reset(None)

    def reset(self, instance: MilpInstance | None) -> None:
        n = 0 if instance is None else instance.n_vars
        self.sum_up = np.zeros(n)
        self.sum_down = np.zeros(n)
        self.n_up = np.zeros(n, dtype=np.int64)
        self.n_down = np.zeros(n, dtype=np.int64)
        self._strong_here: set[int] = set()

    def record(self, var: int, value: float, up, down, parent_obj: float) -> None:
        if up.status is LpStatus.OPTIMAL:
            self.sum_up[var] += (up.objective - parent_obj) / (math.ceil(value) - value)
            self.n_up[var] += 1
        if down.status is LpStatus.OPTIMAL:
            self.sum_down[var] += (down.objective - parent_obj) / (value - math.floor(value))
            self.n_down[var] += 1

    def pseudocost(self, var: int, up: bool) -> float:
        sums, counts = (self.sum_up, self.n_up) if up else (self.sum_down, self.n_down)
        if counts[var]:
            return sums[var] / counts[var]
        seen = counts > 0
        if seen.any():
            return float(np.mean(sums[seen] / counts[seen]))
        return 1.0

    def reliable(self, var: int) -> bool:
        return min(self.n_up[var], self.n_down[var]) >= self.k

    def select(self, ctx: NodeContext) -> int:
        if len(self.n_up) != ctx.instance.n_vars:
            self.reset(ctx.instance)
        parent = ctx.outcome.objective
        unreliable = [j for j in ctx.candidates.indices if not self.reliable(j)]
        table = {e.index: e.score for e in strong_branching(ctx, self.cfg, unreliable)} if unreliable else {}
        for j in unreliable:
            if table[j] != -math.inf:
                self.record(j, ctx.candidates.value_of(j), ctx.child(j, True), ctx.child(j, False), parent)
        self._strong_here = set(unreliable)
        scores = []
        for j, v in ctx.candidates:
            if j in table:
                scores.append(table[j])
            else:
                gain_up = self.pseudocost(j, True) * (math.ceil(v) - v)
                gain_down = self.pseudocost(j, False) * (v - math.floor(v))
                scores.append(self.cfg.score(gain_up, gain_down))
        return argmax_lowest(ctx.candidates.indices, scores)

    def on_branch(self, ctx, var, up, down) -> None:
        if var not in self._strong_here:
            self.record(var, ctx.candidates.value_of(var), up, down, ctx.outcome.objective)


class GnnPolicy(BranchingPolicy):
    """Branch on the candidate with the highest model output."""

    def __init__(self, model):
        self.model = model
        self.name = model.arch
        self._work = 0

    def reset(self, instance) -> None:
        self._work = 0

    def scores(self, ctx: NodeContext) -> np.ndarray:
        graph = encode_graph(ctx.instance)
        before = self.model.counter.messages
        y = self.model.predict(graph, list(ctx.candidates.indices))
        self._work += self.model.counter.messages - before
        return y

    def select(self, ctx: NodeContext) -> int:
        return argmax_lowest(ctx.candidates.indices, self.scores(ctx).tolist())

    @property
    def work(self) -> int:
        return self._work


def make_policy(spec: str, cfg: PolicyConfig = PolicyConfig(), reliability_k: int = 4) -> BranchingPolicy:
    """Build a policy from a short name: ``strong``, ``mostfrac``, ``pseudocost`` or ``gnn:<ckpt>``."""
    if spec == "strong":
        return StrongBranchingPolicy(cfg)
    if spec == "mostfrac":
        return MostFractionalPolicy()
    if spec == "pseudocost":
        return PseudocostPolicy(cfg, reliability_k)
    if spec.startswith("gnn:"):
        from .gnn import load_checkpoint

        return GnnPolicy(load_checkpoint(spec[4:]))
    raise ValueError(f"unknown policy {spec!r}")
