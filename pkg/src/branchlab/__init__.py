"""Learning-to-branch lab: a small MILP branch-and-bound solver, strong-branching
expert, bipartite-graph GNN policies and the imitation pipeline around them."""

from .bnb import BranchAndBound, SolveStats, solve
from .generators import GenSpec, generate
from .gnn import build_model, load_checkpoint, save_checkpoint
from .imitation import BranchSample, TrainConfig, collect_samples, eval_accuracy, train
from .kernels import backend
from .lp import LpStatus, solve_lp
from .milp import BipartiteGraph, MilpInstance, encode_graph, from_dense
from .policies import PolicyConfig, make_policy, strong_branching
from .report import aggregate

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph", "BranchAndBound", "BranchSample", "GenSpec", "LpStatus", "MilpInstance",
    "PolicyConfig", "SolveStats", "TrainConfig", "aggregate", "backend", "build_model",
    "collect_samples", "encode_graph", "eval_accuracy", "from_dense", "generate", "load_checkpoint",
    "make_policy", "save_checkpoint", "solve", "solve_lp", "strong_branching", "train",
]
