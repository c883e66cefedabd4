"""Strong-branching imitation: sample collection, losses, training, accuracy."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .bnb import NodeContext, solve
from .gnn import GnnModel, from_checkpoint, to_checkpoint
from .lp import NumericalBreakdown
from .milp import BipartiteGraph, DataFormatError, MilpInstance, encode_graph, from_json_dict, to_json_dict
from .policies import PolicyConfig, StrongBranchingPolicy, argmax_lowest, select_argmax, strong_branching

log = logging.getLogger(__name__)

SAMPLES_FORMAT = "SAMPLES-JSONL"
SAMPLES_VERSION = 1
PAIR_MARGIN = 1e-9
LOSSES = ("scores", "rank", "pairwise")


class EmptyDataset(ValueError):
    pass


@dataclass(eq=False)
class BranchSample:
    """One expert decision: node-local instance, candidates and their scores."""

    instance: MilpInstance
    candidates: tuple[int, ...]
    sb_scores: tuple[float, ...]
    best: int
    instance_id: str = ""
    node_id: int = 0

    def __post_init__(self):
        self.candidates = tuple(int(j) for j in self.candidates)
        self.sb_scores = tuple(float(s) for s in self.sb_scores)
        if len(self.candidates) < 2 or len(self.candidates) != len(self.sb_scores):
            raise ValueError("a sample needs >= 2 candidates with one score each")
        if not all(math.isfinite(s) for s in self.sb_scores):
            raise ValueError("sample scores must be finite")
        if self.best not in self.candidates:
            raise ValueError("best must be one of the candidates")

    @cached_property
    def graph(self) -> BipartiteGraph:
        return encode_graph(self.instance)

    @property
    def best_position(self) -> int:
        return self.candidates.index(self.best)

    def to_json(self) -> dict:
        return {
            "format": SAMPLES_FORMAT,
            "version": SAMPLES_VERSION,
            "instance_id": self.instance_id,
            "node_id": self.node_id,
            "instance": to_json_dict(self.instance),
            "candidates": list(self.candidates),
            "sb_scores": list(self.sb_scores),
            "best": self.best,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BranchSample":
        if obj.get("format") != SAMPLES_FORMAT or obj.get("version") != SAMPLES_VERSION:
            raise DataFormatError(f"not a {SAMPLES_FORMAT} v{SAMPLES_VERSION} record")
        try:
            return cls(from_json_dict(obj["instance"]), obj["candidates"], obj["sb_scores"], int(obj["best"]),
                       str(obj.get("instance_id", "")), int(obj.get("node_id", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(f"malformed sample: {exc}") from exc


def save_samples(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json()) + "\n")


def load_samples(path) -> list[BranchSample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            out.append(BranchSample.from_json(obj))
    return out


# -- collection ------------------------------------------------------------------

class _NodeCapReached(Exception):
    pass


class _RecordingExpert(StrongBranchingPolicy):
    def __init__(self, cfg: PolicyConfig, node_cap: int | None, instance_id: str):
        super().__init__(cfg)
        self.node_cap = node_cap
        self.instance_id = instance_id
        self.samples: list[BranchSample] = []
        self.expanded = 0

    def select(self, ctx: NodeContext) -> int:
        if self.node_cap is not None and self.expanded >= self.node_cap:
            raise _NodeCapReached
        self.expanded += 1
        choice = super().select(ctx)
        table = self.last_table
        if len(table) >= 2 and all(math.isfinite(e.score) for e in table):
            self.samples.append(BranchSample(ctx.instance, table.indices, table.scores, choice,
                                             self.instance_id, ctx.node.node_id if ctx.node else 0))
        return choice


def collect_samples(instances, node_cap: int | None = 50, seed: int = 0, cfg: PolicyConfig = PolicyConfig(),
                    instance_ids=None) -> list[BranchSample]:
    """Run B&B with the strong-branching expert and record every expanded node.

    Nodes with fewer than two candidates are not recorded. ``node_cap`` bounds
    the number of expanded nodes per instance. Collection is deterministic;
    ``seed`` is accepted for interface symmetry and does not change results.
    """
    instances = list(instances)
    ids = [inst.name or f"inst{k}" for k, inst in enumerate(instances)] if instance_ids is None else list(instance_ids)
    out: list[BranchSample] = []
    for inst, iid in zip(instances, ids):
        expert = _RecordingExpert(cfg, node_cap, iid)
        try:
            solve(inst, expert)
        except _NodeCapReached:
            pass
        except (NumericalBreakdown, AssertionError) as exc:
            log.warning("skipping instance %s: %s", iid, exc)
            continue
        out.extend(expert.samples)
    return out


# -- losses ------------------------------------------------------------------------
# Each *_grad function returns (value, d value / d pred).

def normalize_scores(target) -> np.ndarray | None:
    """Min-max scale to [0, 1]; ``None`` for a constant vector."""
    t = np.asarray(target, dtype=np.float64)
    lo, hi = t.min(), t.max()
    if not hi > lo:
        return None
    return (t - lo) / (hi - lo)


def scores_grad(pred, target):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = normalize_scores(target)
    if t is None:
        raise ValueError("constant target has no normalized form")
    r = p - t
    return float(np.mean(r * r)), 2.0 * r / len(p)


def rank_grad(pred, best: int):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    if not 0 <= best < len(p):
        raise IndexError("best position out of range")
    z = p - p.max()
    lse = math.log(np.exp(z).sum())
    soft = np.exp(z - lse)
    g = soft.copy()
    g[best] -= 1.0
    return float(lse - z[best]), g


def pairwise_grad(pred, target, margin: float = PAIR_MARGIN):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if len(p) != len(t) or len(p) < 2:
        raise ValueError("pairwise loss needs equal lengths >= 2")
    a, b = np.nonzero(t[:, None] > t[None, :] + margin)
    g = np.zeros_like(p)
    if not len(a):
        return 0.0, g
    diff = p[a] - p[b]
    value = float(np.mean(np.logaddexp(0.0, -diff)))
    # d/d diff of softplus(-diff) = -sigmoid(-diff)
    w = -np.exp(-np.logaddexp(0.0, diff)) / len(a)
    np.add.at(g, a, w)
    np.add.at(g, b, -w)
    return value, g


def loss_scores(pred, target) -> float:
    return scores_grad(pred, target)[0]


def loss_rank(pred, best: int) -> float:
    return rank_grad(pred, best)[0]


def loss_pairwise(pred, target) -> float:
    return pairwise_grad(pred, target)[0]


def sample_loss_fn(kind: str, sample: BranchSample):
    """Closure ``pred -> (value, grad)`` for ``sample``, or ``None`` if the sample is unusable."""
    if kind == "scores":
        if normalize_scores(sample.sb_scores) is None:
            return None
        return lambda p: scores_grad(p, sample.sb_scores)
    if kind == "rank":
        return lambda p: rank_grad(p, sample.best_position)
    if kind == "pairwise":
        return lambda p: pairwise_grad(p, sample.sb_scores)
    raise ValueError(f"unknown loss {kind!r}")


# -- training --------------------------------------------------------------------

@dataclass
class TrainConfig:
    loss: str = "rank"
    max_epochs: int | None = None
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    patience: int | None = 50
    clip_norm: float | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def epochs_for(self, arch: str) -> int:
        if self.max_epochs is not None:
            return self.max_epochs
        return 200 if arch == "subgraph" else 500


@dataclass
class TrainResult:
    checkpoint: dict
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def split_by_instance(samples, val_fraction: float, seed: int):
    """Disjoint train/val split over instance ids."""
    ids = sorted({s.instance_id for s in samples})
    rng = np.random.default_rng(seed)
    order = [ids[k] for k in rng.permutation(len(ids))]
    n_val = 0 if len(ids) < 2 else min(len(ids) - 1, max(1, int(round(val_fraction * len(ids)))))
    val_ids = set(order[:n_val])
    train = [s for s in samples if s.instance_id not in val_ids]
    val = [s for s in samples if s.instance_id in val_ids]
    return train, val


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / norm
    return norm


def _usable(samples, kind):
    return [(s, fn) for s in samples if (fn := sample_loss_fn(kind, s)) is not None]


def dataset_loss(model: GnnModel, samples, kind: str) -> float:
    pairs = _usable(samples, kind)
    if not pairs:
        return math.nan
    total = 0.0
    for s, fn in pairs:
        total += fn(model.predict(s.graph, s.candidates))[0]
    return total / len(pairs)


def train(model: GnnModel, samples, cfg: TrainConfig = TrainConfig(), val_samples=None, on_epoch=None) -> TrainResult:
    """Adam training with best-validation checkpoint selection and early stopping.

    Without ``val_samples`` the data is split by instance id. If that leaves no
    validation data the training set doubles as validation set.
    """
    samples = list(samples)
    if val_samples is None:
        train_set, val_set = split_by_instance(samples, cfg.val_fraction, cfg.seed)
    else:
        train_set, val_set = samples, list(val_samples)
    train_pairs = _usable(train_set, cfg.loss)
    if not train_pairs:
        raise EmptyDataset("no usable training samples")
    if not _usable(val_set, cfg.loss):
        val_set = train_set

    params = model.parameters()
    opt = ad.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    best_vals = [p.value.copy() for p in params]
    result = TrainResult(checkpoint={})
    epochs = cfg.epochs_for(model.arch)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_pairs))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_pairs[k] for k in order[start:start + cfg.batch_size]]
            ad.zero_grad(params)
            losses = [ad.custom_scalar(model.candidate_scores(s.graph, s.candidates), fn) for s, fn in batch]
            loss = ad.mean_of(losses)
            loss.backward()
            if cfg.clip_norm is not None:
                clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            running += loss.value[0, 0] * len(batch)
        val_loss = dataset_loss(model, val_set, cfg.loss)
        train_loss = running / len(train_pairs)
        result.history.append((epoch, train_loss, val_loss))
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_vals = [p.value.copy() for p in params]
        elif cfg.patience is not None and epoch - result.best_epoch >= cfg.patience:
            break
    for p, v in zip(params, best_vals):
        p.value = v
    meta = {
        "epochs": len(result.history),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "seed": cfg.seed,
        "loss": cfg.loss,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "train_samples": len(train_pairs),
        "val_samples": len(val_set),
    }
    model.meta = meta
    result.checkpoint = to_checkpoint(model, meta)
    return result


def _as_model(ckpt) -> GnnModel:
    return from_checkpoint(ckpt) if isinstance(ckpt, dict) else ckpt


def predicted_choice(model: GnnModel, sample: BranchSample) -> int:
    return argmax_lowest(sample.candidates, model.predict(sample.graph, sample.candidates).tolist())


def eval_accuracy(ckpt, samples) -> float:
    """Fraction of samples where the model's top candidate is the expert's choice."""
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    model = _as_model(ckpt)
    return sum(predicted_choice(model, s) == s.best for s in samples) / len(samples)


def recompute_scores(sample: BranchSample, cfg: PolicyConfig = PolicyConfig()):
    """Strong-branching table for the sample's node-local instance, solved afresh."""
    ctx = NodeContext.root(sample.instance)
    table = strong_branching(ctx, cfg)
    return table, select_argmax(table)
