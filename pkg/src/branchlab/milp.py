"""MILP data model, bound restriction, JSON I/O and the bipartite graph encoding.

Instances are always stored in the canonical form

    min c^T x   s.t.   A x <= b,   l <= x <= u,   x_j integral for j in int_vars

with ``A`` kept in coordinate form. Maximization problems and other
constraint senses are converted by the caller (see the generators).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

MILP_FORMAT = "MILP-JSON"
MILP_VERSION = 1

# Column layout of BipartiteGraph.var_feats. The first four columns are
# (c_j, l_j, u_j, is_int); infinite bounds are clamped to 0 and flagged.
VAR_FEATURES = ("c", "l", "u", "is_int", "l_finite", "u_finite")
CONS_FEATURES = ("b",)


class InvalidInstance(ValueError):
    """Raised when MILP data violates the canonical-form invariants."""


class DataFormatError(ValueError):
    """Raised when a serialized artifact cannot be parsed."""


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """A mixed-integer linear program in canonical ``<=`` form.

    ``rows``, ``cols`` and ``vals`` hold the nonzeros of ``A`` sorted by
    (row, col). Arrays are made read-only on construction.
    """

    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    b: np.ndarray
    l: np.ndarray
    u: np.ndarray
    int_vars: tuple[int, ...]
    name: str = ""
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        l = np.array(self.l, dtype=np.float64).reshape(-1)
        u = np.array(self.u, dtype=np.float64).reshape(-1)
        rows = np.array(self.rows, dtype=np.int64).reshape(-1)
        cols = np.array(self.cols, dtype=np.int64).reshape(-1)
        vals = np.array(self.vals, dtype=np.float64).reshape(-1)
        n, m = len(c), len(b)
        if len(l) != n or len(u) != n:
            raise InvalidInstance("bounds must have one entry per variable")
        if not (len(rows) == len(cols) == len(vals)):
            raise InvalidInstance("coordinate arrays differ in length")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(vals)):
            raise InvalidInstance("c, b and A must be finite")
        if np.any(np.isnan(l)) or np.any(np.isnan(u)) or np.any(l == np.inf) or np.any(u == -np.inf):
            raise InvalidInstance("lower bounds must be < +inf and upper bounds > -inf")
        if len(rows) and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise InvalidInstance("coordinate out of range")
        if np.any(vals == 0.0):
            raise InvalidInstance("explicit zero in A")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows) > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if np.any(dup):
                raise InvalidInstance("duplicate coordinate in A")
        iv = tuple(int(j) for j in self.int_vars)
        if any(j < 0 or j >= n for j in iv) or any(b_ <= a_ for a_, b_ in zip(iv, iv[1:])):
            raise InvalidInstance("int_vars must be strictly increasing and in range")
        for name, arr in (("c", c), ("b", b), ("l", l), ("u", u), ("rows", rows), ("cols", cols), ("vals", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "int_vars", iv)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_cons(self) -> int:
        return len(self.b)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def box_infeasible(self) -> bool:
        """True if some variable has an empty interval ``l_j > u_j``."""
        return bool(np.any(self.l > self.u))

    @property
    def is_int(self) -> np.ndarray:
        mask = np.zeros(self.n_vars, dtype=bool)
        mask[list(self.int_vars)] = True
        return mask

    def dense_A(self) -> np.ndarray:
        """Dense copy of the constraint matrix (cached, read-only)."""
        if self._dense is None:
            A = np.zeros((self.n_cons, self.n_vars))
            A[self.rows, self.cols] = self.vals
            A.setflags(write=False)
            object.__setattr__(self, "_dense", A)
        return self._dense

    def with_bounds(self, l, u) -> "MilpInstance":
        """Same problem with replaced bound vectors (shares ``A``)."""
        l = np.array(l, dtype=np.float64).reshape(-1)
        u = np.array(u, dtype=np.float64).reshape(-1)
        if len(l) != self.n_vars or len(u) != self.n_vars:
            raise InvalidInstance("bounds must have one entry per variable")
        if np.any(np.isnan(l)) or np.any(np.isnan(u)) or np.any(l == np.inf) or np.any(u == -np.inf):
            raise InvalidInstance("lower bounds must be < +inf and upper bounds > -inf")
        l.setflags(write=False)
        u.setflags(write=False)
        inst = object.__new__(MilpInstance)
        for f in fields(self):
            object.__setattr__(inst, f.name, getattr(self, f.name))
        object.__setattr__(inst, "l", l)
        object.__setattr__(inst, "u", u)
        return inst

    def check_feasible(self, x, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < self.l - tol) or np.any(x > self.u + tol):
            return False
        if np.any(self.dense_A() @ x > self.b + tol):
            return False
        xi = x[list(self.int_vars)]
        return bool(np.all(np.abs(xi - np.round(xi)) <= tol))

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=np.float64))


def from_dense(c, A, b, l=None, u=None, int_vars=(), name="") -> MilpInstance:
    """Build an instance from a dense matrix; zeros are dropped."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        A = A.reshape(len(np.atleast_1d(b)), -1)
    n = A.shape[1]
    rows, cols = np.nonzero(A)
    l = np.zeros(n) if l is None else l
    u = np.full(n, np.inf) if u is None else u
    return MilpInstance(c=c, rows=rows, cols=cols, vals=A[rows, cols], b=b, l=l, u=u,
                        int_vars=tuple(int_vars), name=name)


def restrict_bounds(inst: MilpInstance, var: int, new_l: float, new_u: float) -> MilpInstance:
    """Intersect the box of one variable with ``[new_l, new_u]``.

    The result may be box-infeasible (``l > u``); check
    :attr:`MilpInstance.box_infeasible`.
    """
    if not 0 <= var < inst.n_vars:
        raise IndexError(f"variable {var} out of range for n={inst.n_vars}")
    l = inst.l.copy()
    u = inst.u.copy()
    l[var] = max(l[var], new_l)
    u[var] = min(u[var], new_u)
    return inst.with_bounds(l, u)


# -- MILP-JSON v1 ------------------------------------------------------------

def _bound_to_json(v: float):
    if v == np.inf:
        return "inf"
    if v == -np.inf:
        return "-inf"
    return float(v)


def _bound_from_json(v) -> float:
    if isinstance(v, str):
        if v in ("inf", "+inf"):
            return math.inf
        if v == "-inf":
            return -math.inf
        raise DataFormatError(f"bad bound literal {v!r}")
    return float(v)


def to_json_dict(inst: MilpInstance) -> dict:
    return {
        "format": MILP_FORMAT,
        "version": MILP_VERSION,
        "name": inst.name,
        "n": inst.n_vars,
        "m": inst.n_cons,
        "c": [float(v) for v in inst.c],
        "A": [[int(i), int(j), float(v)] for i, j, v in zip(inst.rows, inst.cols, inst.vals)],
        "b": [float(v) for v in inst.b],
        "l": [_bound_to_json(v) for v in inst.l],
        "u": [_bound_to_json(v) for v in inst.u],
        "int_vars": list(inst.int_vars),
    }


def from_json_dict(obj: dict) -> MilpInstance:
    if not isinstance(obj, dict):
        raise DataFormatError("MILP-JSON must be an object")
    if obj.get("format", MILP_FORMAT) != MILP_FORMAT:
        raise DataFormatError(f"not a MILP-JSON document: {obj.get('format')!r}")
    if obj.get("version", MILP_VERSION) != MILP_VERSION:
        raise DataFormatError(f"unsupported MILP-JSON version {obj.get('version')!r}")
    try:
        n, m = int(obj["n"]), int(obj["m"])
        coo = obj["A"]
        rows = [int(t[0]) for t in coo]
        cols = [int(t[1]) for t in coo]
        vals = [float(t[2]) for t in coo]
        inst = MilpInstance(
            c=obj["c"], rows=rows, cols=cols, vals=vals, b=obj["b"],
            l=[_bound_from_json(v) for v in obj["l"]],
            u=[_bound_from_json(v) for v in obj["u"]],
            int_vars=tuple(obj["int_vars"]), name=str(obj.get("name", "")),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise DataFormatError(f"malformed MILP-JSON: {exc}") from exc
    except InvalidInstance as exc:
        raise DataFormatError(str(exc)) from exc
    if inst.n_vars != n or inst.n_cons != m:
        raise DataFormatError("declared n/m disagree with data")
    return inst


def dumps(inst: MilpInstance) -> str:
    return json.dumps(to_json_dict(inst), separators=(",", ":"))


def loads(text: str) -> MilpInstance:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(str(exc)) from exc
    return from_json_dict(obj)


def save(inst: MilpInstance, path) -> None:
    Path(path).write_text(dumps(inst) + "\n")


def load(path) -> MilpInstance:
    inst = loads(Path(path).read_text())
    if not inst.name:
        object.__setattr__(inst, "name", Path(path).stem)
    return inst


# -- bipartite graph -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Constraint/variable bipartite graph of a MILP.

    ``edge_cons``, ``edge_var`` and ``edge_w`` list the edges sorted by
    (constraint, variable); ``cons_adj`` / ``var_adj`` are the mirrored
    neighbor lists as ``(neighbor, weight)`` tuples in ascending order.
    """

    cons_feats: np.ndarray
    var_feats: np.ndarray
    edge_cons: np.ndarray
    edge_var: np.ndarray
    edge_w: np.ndarray
    cons_adj: tuple
    var_adj: tuple

    @property
    def n(self) -> int:
        return self.var_feats.shape[0]

    @property
    def m(self) -> int:
        return self.cons_feats.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.edge_w)

    def dense_weights(self) -> np.ndarray:
        W = np.zeros((self.m, self.n))
        W[self.edge_cons, self.edge_var] = self.edge_w
        return W

    def edge_list(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.edge_cons, self.edge_var, self.edge_w)]


def _clamped(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    finite = np.isfinite(v)
    return np.where(finite, v, 0.0), finite.astype(np.float64)


def encode_graph(inst: MilpInstance) -> BipartiteGraph:
    """Encode an instance as its bipartite constraint/variable graph."""
    l_val, l_fin = _clamped(inst.l)
    u_val, u_fin = _clamped(inst.u)
    var_feats = np.column_stack([inst.c, l_val, u_val, inst.is_int.astype(np.float64), l_fin, u_fin])
    cons_feats = inst.b.reshape(-1, 1).copy()
    return _graph_from_parts(cons_feats, var_feats, inst.rows, inst.cols, inst.vals)


def _graph_from_parts(cons_feats, var_feats, rows, cols, vals) -> BipartiteGraph:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    m, n = cons_feats.shape[0], var_feats.shape[0]
    cons_adj = [[] for _ in range(m)]
    var_adj = [[] for _ in range(n)]
    for i, j, w in zip(rows.tolist(), cols.tolist(), vals.tolist()):
        cons_adj[i].append((j, w))
        var_adj[j].append((i, w))
    for arr in (cons_feats, var_feats, rows, cols, vals):
        arr.setflags(write=False)
    return BipartiteGraph(
        cons_feats=cons_feats, var_feats=var_feats, edge_cons=rows, edge_var=cols, edge_w=vals,
        cons_adj=tuple(tuple(a) for a in cons_adj), var_adj=tuple(tuple(a) for a in var_adj),
    )


def make_graph(cons_feats, var_feats, edges) -> BipartiteGraph:
    """Build a graph directly from features and ``(i, j, w)`` edge triples."""
    cons_feats = np.array(cons_feats, dtype=np.float64).reshape(len(cons_feats), -1)
    var_feats = np.array(var_feats, dtype=np.float64).reshape(len(var_feats), -1)
    edges = list(edges)
    rows = [e[0] for e in edges]
    cols = [e[1] for e in edges]
    vals = [e[2] for e in edges]
    return _graph_from_parts(cons_feats, var_feats, rows, cols, vals)


def permute_graph(g: BipartiteGraph, perm_cons, perm_vars) -> BipartiteGraph:
    """Relabel nodes: old constraint ``i`` becomes ``perm_cons[i]``, likewise for variables."""
    perm_cons = np.asarray(perm_cons, dtype=np.int64)
    perm_vars = np.asarray(perm_vars, dtype=np.int64)
    cons_feats = np.empty_like(g.cons_feats)
    cons_feats[perm_cons] = g.cons_feats
    var_feats = np.empty_like(g.var_feats)
    var_feats[perm_vars] = g.var_feats
    return _graph_from_parts(cons_feats, var_feats, perm_cons[g.edge_cons], perm_vars[g.edge_var], g.edge_w.copy())
