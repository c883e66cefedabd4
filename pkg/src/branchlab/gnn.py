"""MPNN, node-anchored Subgraph GNN and 2-FGNN on bipartite MILP graphs.

All three produce one scalar per variable node (or per anchor). Every learnable
function is an :class:`~branchlab.autodiff.Mlp` with one hidden layer of width
``hidden``. Aggregations use scatter-add in a fixed ascending order, so results
are reproducible bit for bit on one platform.

Each model carries a :class:`MessageCounter`. One message is one evaluation of
the pair ``(f^l, g^l)`` for one edge (MPNN, Subgraph, per anchor) or for one
``(i, j, j')`` triple (2-FGNN), per layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Mlp, ShapeMismatch, Tensor
from .milp import CONS_FEATURES, VAR_FEATURES, BipartiteGraph, DataFormatError

CKPT_FORMAT = "CKPT-JSON"
CKPT_VERSION = 1

ARCHS = ("mpnn", "subgraph", "fgnn2")
DEFAULT_FGNN_CAP = 20_000


class ArchitectureMismatch(ShapeMismatch):
    """Graph feature widths differ from what the model was built for."""


class AnchorOutOfRange(IndexError):
    pass


class OOMGuard(MemoryError):
    """Dense pair state would exceed the configured size cap."""


@dataclass
class MessageCounter:
    messages: int = 0
    global_terms: int = 0

    def reset(self) -> None:
        self.messages = 0
        self.global_terms = 0


class GnnModel:
    arch = "base"

    def __init__(self, layers: int, hidden: int, seed: int = 0, scale_inputs: bool = False,
                 cons_dim: int = len(CONS_FEATURES), var_dim: int = len(VAR_FEATURES), init: str = "uniform"):
        if layers < 0 or hidden < 1:
            raise ValueError("layers must be >= 0 and hidden >= 1")
        self.layers = layers
        self.scale_inputs = scale_inputs
        self.hidden = hidden
        self.seed = seed
        self.cons_dim = cons_dim
        self.var_dim = var_dim
        self.init = init
        self.counter = MessageCounter()
        self.mlps: dict[str, Mlp] = {}
        rng = np.random.default_rng(seed)
        for name, din, dout in self._layout():
            self.mlps[name] = Mlp([din, hidden, dout], rng, init)

    def _layout(self) -> list[tuple[str, int, int]]:
        raise NotImplementedError

    def hyper(self) -> dict:
        return {"layers": self.layers, "hidden": self.hidden, "scale_inputs": self.scale_inputs,
                "cons_dim": self.cons_dim, "var_dim": self.var_dim, "init": self.init}

    def parameters(self) -> list[Tensor]:
        out = []
        for mlp in self.mlps.values():
            out += mlp.parameters()
        return out

    def _inputs(self, g: BipartiteGraph):
        """Checked (cons_feats, var_feats, edge weights), scaled if ``scale_inputs``."""
        if g.cons_feats.shape[1] != self.cons_dim or g.var_feats.shape[1] != self.var_dim:
            raise ArchitectureMismatch(
                f"model expects ({self.cons_dim}, {self.var_dim}) feature widths, graph has "
                f"({g.cons_feats.shape[1]}, {g.var_feats.shape[1]})")
        if not self.scale_inputs:
            return g.cons_feats, g.var_feats, g.edge_w
        return scale_features(g)

    def forward(self, g: BipartiteGraph, anchors=None) -> Tensor:
        raise NotImplementedError

    def candidate_scores(self, g: BipartiteGraph, candidates) -> Tensor:
        """Model outputs for ``candidates`` as a ``k x 1`` tensor."""
        return ad.gather_rows(self.forward(g), list(candidates))

    def predict(self, g: BipartiteGraph, candidates) -> np.ndarray:
        return self.candidate_scores(g, candidates).value[:, 0].copy()


def scale_features(g: BipartiteGraph):
    """Divide the objective column by ``max |c|`` and each row ``(A_i, b_i)`` by its largest magnitude.

    Both rescalings leave the optimal decisions of the MILP unchanged and
    commute with node permutations. Only the leading feature column of each
    side (``c`` and ``b``) is touched.
    """
    var = g.var_feats.copy()
    cmax = np.abs(var[:, 0]).max(initial=0.0)
    if cmax > 0:
        var[:, 0] /= cmax
    row_max = np.abs(g.cons_feats[:, 0]).copy()
    np.maximum.at(row_max, g.edge_cons, np.abs(g.edge_w))
    row_max[row_max == 0] = 1.0
    cons = g.cons_feats.copy()
    cons[:, 0] /= row_max
    return cons, var, g.edge_w / row_max[g.edge_cons]


class MpnnModel(GnnModel):
    arch = "mpnn"

    def __init__(self, layers: int = 3, hidden: int = 64, seed: int = 0, **dims):
        super().__init__(layers, hidden, seed, **dims)

    def _layout(self):
        H = self.hidden
        out = [("p0", self.cons_dim, H), ("q0", self.var_dim, H)]
        for l in range(1, self.layers + 1):
            out += [(f"f{l}", H + 1, H), (f"g{l}", H + 1, H), (f"p{l}", 2 * H, H), (f"q{l}", 2 * H, H)]
        out.append(("r", 3 * H, 1))
        return out

    def forward(self, g: BipartiteGraph, anchors=None) -> Tensor:
        cons_f, var_f, ew = self._inputs(g)
        mlp = self.mlps
        m, n = g.m, g.n
        ec, ev, w = g.edge_cons, g.edge_var, ad.constant(ew.reshape(-1, 1))
        s = mlp["p0"](ad.constant(cons_f))
        t = mlp["q0"](ad.constant(var_f))
        for l in range(1, self.layers + 1):
            to_cons = mlp[f"f{l}"].gathered([(t, ev), (w, None)])
            to_vars = mlp[f"g{l}"].gathered([(s, ec), (w, None)])
            self.counter.messages += g.n_edges
            s, t = (mlp[f"p{l}"](ad.concat_cols(s, ad.scatter_add_rows(ec, to_cons, m))),
                    mlp[f"q{l}"](ad.concat_cols(t, ad.scatter_add_rows(ev, to_vars, n))))
        zeros = np.zeros(n, dtype=np.int64)
        return mlp["r"].gathered([(ad.sum_rows(s), zeros), (ad.sum_rows(t), zeros), (t, None)])


class SubgraphModel(GnnModel):
    """One MPNN-style pass per anchor variable, batched over anchors.

    Pair states are stored anchor-major: ``s`` row ``a*m + i`` and ``t`` row
    ``a*n + j`` belong to the ``a``-th anchor.
    """

    arch = "subgraph"

    def __init__(self, layers: int = 2, hidden: int = 64, seed: int = 0, global_agg: bool = False, **dims):
        self.global_agg = global_agg
        super().__init__(layers, hidden, seed, **dims)

    def hyper(self) -> dict:
        return {**super().hyper(), "global_agg": self.global_agg}

    def _layout(self):
        H = self.hidden
        upd = 4 * H if self.global_agg else 2 * H
        out = [("p0", self.cons_dim + self.var_dim, H), ("q0", 2 * self.var_dim + 1, H)]
        for l in range(1, self.layers + 1):
            out += [(f"f{l}", H + 1, H), (f"g{l}", H + 1, H), (f"p{l}", upd, H), (f"q{l}", upd, H)]
        out.append(("r", 2 * H, 1))
        return out

    def forward(self, g: BipartiteGraph, anchors=None) -> Tensor:
        cons_f, var_f, ew = self._inputs(g)
        m, n = g.m, g.n
        anchors = np.arange(n, dtype=np.int64) if anchors is None or len(anchors) == 0 else \
            np.asarray(anchors, dtype=np.int64)
        if len(anchors) and (anchors.min() < 0 or anchors.max() >= n):
            raise AnchorOutOfRange(f"anchor outside [0, {n})")
        mlp = self.mlps
        K = len(anchors)
        E = g.n_edges
        s_owner = np.repeat(np.arange(K), m)
        t_owner = np.repeat(np.arange(K), n)
        cons_i = np.tile(np.arange(m), K)
        var_j = np.tile(np.arange(n), K)
        s0_in = np.hstack([cons_f[cons_i], var_f[anchors[s_owner]]])
        indicator = (var_j == anchors[t_owner]).astype(np.float64).reshape(-1, 1)
        t0_in = np.hstack([var_f[var_j], var_f[anchors[t_owner]], indicator])
        s = mlp["p0"](ad.constant(s0_in.reshape(K * m, -1)))
        t = mlp["q0"](ad.constant(t0_in.reshape(K * n, -1)))

        shift = np.repeat(np.arange(K), E)
        ec = np.tile(g.edge_cons, K) + shift * m
        ev = np.tile(g.edge_var, K) + shift * n
        w = ad.constant(np.tile(ew, K).reshape(-1, 1))
        for l in range(1, self.layers + 1):
            to_cons = mlp[f"f{l}"].gathered([(t, ev), (w, None)])
            to_vars = mlp[f"g{l}"].gathered([(s, ec), (w, None)])
            self.counter.messages += K * E
            s_in = [(s, None), (ad.scatter_add_rows(ec, to_cons, K * m), None)]
            t_in = [(t, None), (ad.scatter_add_rows(ev, to_vars, K * n), None)]
            if self.global_agg:
                sum_t = ad.scatter_add_rows(t_owner, t, K)
                sum_s = ad.scatter_add_rows(s_owner, s, K)
                self.counter.global_terms += K * (m + n)
                s_in += [(sum_t, s_owner), (sum_s, s_owner)]
                t_in += [(sum_t, t_owner), (sum_s, t_owner)]
            s, t = mlp[f"p{l}"].gathered(s_in), mlp[f"q{l}"].gathered(t_in)
        pooled = ad.concat_cols(ad.scatter_add_rows(s_owner, s, K), ad.scatter_add_rows(t_owner, t, K))
        return mlp["r"](pooled)

    def candidate_scores(self, g: BipartiteGraph, candidates) -> Tensor:
        return self.forward(g, anchors=list(candidates))


class FgnnModel(GnnModel):
    """Second-order folklore GNN with dense pair states.

    ``s`` row ``i*n + j'`` holds the (constraint i, variable j') pair and ``t``
    row ``j*n + j'`` the (variable j, variable j') pair.
    """

    arch = "fgnn2"

    def __init__(self, layers: int = 2, hidden: int = 64, seed: int = 0, pair_cap: int = DEFAULT_FGNN_CAP, **dims):
        self.pair_cap = pair_cap
        super().__init__(layers, hidden, seed, **dims)

    def _layout(self):
        H = self.hidden
        out = [("p0", self.cons_dim + self.var_dim + 1, H), ("q0", 2 * self.var_dim + 1, H)]
        for l in range(1, self.layers + 1):
            out += [(f"f{l}", 2 * H, H), (f"g{l}", 2 * H, H), (f"p{l}", 2 * H, H), (f"q{l}", 2 * H, H)]
        out.append(("r", 2 * H, 1))
        return out

    def forward(self, g: BipartiteGraph, anchors=None) -> Tensor:
        cons_f, var_f, ew = self._inputs(g)
        m, n = g.m, g.n
        if n * (n + m) > self.pair_cap:
            raise OOMGuard(f"2-FGNN pair state n*(n+m) = {n * (n + m)} exceeds cap {self.pair_cap}")
        mlp = self.mlps
        dense = np.zeros((m, n))
        dense[g.edge_cons, g.edge_var] = ew
        ii, jp = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
        s0_in = np.hstack([cons_f[ii.ravel()], var_f[jp.ravel()], dense.reshape(-1, 1)])
        jj, jq = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        t0_in = np.hstack([var_f[jj.ravel()], var_f[jq.ravel()],
                           (jj == jq).astype(np.float64).reshape(-1, 1)])
        s = mlp["p0"](ad.constant(s0_in))
        t = mlp["q0"](ad.constant(t0_in))

        # s update: target (i, j'), summed over j ascending
        i3, jp3, j3 = (a.ravel() for a in np.meshgrid(np.arange(m), np.arange(n), np.arange(n), indexing="ij"))
        s_target = i3 * n + jp3
        s_from_t = j3 * n + jp3
        s_from_s = i3 * n + j3
        # t update: target (j, j'), summed over i ascending
        j4, jp4, i4 = (a.ravel() for a in np.meshgrid(np.arange(n), np.arange(n), np.arange(m), indexing="ij"))
        t_target = j4 * n + jp4
        t_from_a = i4 * n + jp4
        t_from_b = i4 * n + j4
        for l in range(1, self.layers + 1):
            fs = mlp[f"f{l}"].gathered([(t, s_from_t), (s, s_from_s)])
            gt = mlp[f"g{l}"].gathered([(s, t_from_a), (s, t_from_b)])
            self.counter.messages += m * n * n
            s, t = (mlp[f"p{l}"](ad.concat_cols(s, ad.scatter_add_rows(s_target, fs, m * n))),
                    mlp[f"q{l}"](ad.concat_cols(t, ad.scatter_add_rows(t_target, gt, n * n))))
        pooled_s = ad.scatter_add_rows(np.tile(np.arange(n), m), s, n)
        pooled_t = ad.scatter_add_rows(np.tile(np.arange(n), n), t, n)
        return mlp["r"](ad.concat_cols(pooled_s, pooled_t))


_CLASSES = {"mpnn": MpnnModel, "subgraph": SubgraphModel, "fgnn2": FgnnModel}


def build_model(arch: str, layers: int | None = None, hidden: int = 64, seed: int = 0,
                global_agg: bool = False, **dims) -> GnnModel:
    if arch not in _CLASSES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    kw = dict(hidden=hidden, seed=seed, **dims)
    if layers is not None:
        kw["layers"] = layers
    if arch == "subgraph":
        kw["global_agg"] = global_agg
    return _CLASSES[arch](**kw)


# -- checkpoints ----------------------------------------------------------------

def to_checkpoint(model: GnnModel, meta: dict | None = None) -> dict:
    return {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "arch": model.arch,
        "hyper": model.hyper(),
        "mlps": {name: mlp.to_lists() for name, mlp in model.mlps.items()},
        "meta": dict(meta or {}),
    }


def from_checkpoint(obj: dict) -> GnnModel:
    try:
        if obj.get("format") != CKPT_FORMAT or obj.get("version") != CKPT_VERSION:
            raise DataFormatError(f"not a {CKPT_FORMAT} v{CKPT_VERSION} document")
        hyper = obj["hyper"]
        dims = {"cons_dim": int(hyper.get("cons_dim", len(CONS_FEATURES))),
                "var_dim": int(hyper.get("var_dim", len(VAR_FEATURES)))}
        model = build_model(obj["arch"], int(hyper["layers"]), int(hyper["hidden"]),
                            global_agg=bool(hyper.get("global_agg", False)),
                            scale_inputs=bool(hyper.get("scale_inputs", False)),
                            init=str(hyper.get("init", "uniform")), **dims)
        if set(obj["mlps"]) != set(model.mlps):
            raise DataFormatError("checkpoint MLP names do not match the architecture")
        for name, mlp in model.mlps.items():
            mlp.load_lists(obj["mlps"][name])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"malformed checkpoint: {exc}") from exc
    model.meta = dict(obj.get("meta", {}))
    return model


def save_checkpoint(model: GnnModel, path, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(to_checkpoint(model, meta), fh)
        fh.write("\n")


def load_checkpoint(path) -> GnnModel:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return from_checkpoint(obj)
