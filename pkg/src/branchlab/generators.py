"""Random instance families: set cover, combinatorial auction, facility location, independent set.

Every generator is a pure function of its :class:`GenSpec`; the same spec
always yields the same instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .milp import MilpInstance

FAMILIES = ("setcover", "cauction", "facilities", "indset")

# (n, m) for setcover/cauction, (facilities, customers) for facilities, nodes for indset
PRESETS = {
    "setcover": {"small": (1000, 500), "medium": (1000, 1000), "large": (1000, 2000)},
    "cauction": {"small": (500, 100), "medium": (1000, 200), "large": (1500, 300)},
    "facilities": {"small": (50, 50), "medium": (100, 100), "large": (150, 150)},
    "indset": {"small": (500,), "medium": (1000,), "large": (1500,)},
}


@dataclass(frozen=True)
class GenSpec:
    """Generator input.

    ``size`` is a preset name or ``"custom"``; custom sizes use ``dims``:
    ``(n_vars, n_cons)`` for setcover and cauction, ``(facilities, customers)``
    for facilities and ``(nodes,)`` for indset. ``params`` overrides family
    parameters by name.
    """

    family: str
    size: str = "small"
    seed: int = 0
    dims: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.size != "custom" and self.size not in PRESETS[self.family]:
            raise ValueError(f"unknown size {self.size!r}")
        if self.size == "custom" and not self.dims:
            raise ValueError("custom size needs dims")

    def resolved_dims(self) -> tuple:
        return tuple(int(d) for d in self.dims) if self.size == "custom" else PRESETS[self.family][self.size]

    def param(self, name, default):
        return self.params.get(name, default)


def _coo(entries: dict[tuple[int, int], float]):
    keys = sorted(entries)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([entries[k] for k in keys], dtype=np.float64)
    return rows, cols, vals


def gen_setcover(spec: GenSpec) -> MilpInstance:
    """Columns cover rows; minimize total cost subject to every row covered."""
    n, m = spec.resolved_dims()
    if n < 2 or m < 1:
        raise ValueError("setcover needs n >= 2 and m >= 1")
    density = float(spec.param("density", 0.05))
    cost_lo, cost_hi = spec.param("cost_range", (1, 100))
    rng = np.random.default_rng(spec.seed)
    cover = np.zeros((m, n), dtype=bool)
    for i in range(m):
        cover[i, rng.choice(n, size=2, replace=False)] = True
    target = max(int(round(density * m * n)), 2 * m)
    free = np.flatnonzero(~cover.ravel())
    extra = target - 2 * m
    if extra > 0:
        cover.ravel()[rng.choice(free, size=min(extra, len(free)), replace=False)] = True
    rows, cols = np.nonzero(cover)
    c = rng.integers(int(cost_lo), int(cost_hi) + 1, size=n).astype(np.float64)
    return MilpInstance(
        c=c, rows=rows, cols=cols, vals=-np.ones(len(rows)), b=-np.ones(m),
        l=np.zeros(n), u=np.ones(n), int_vars=np.arange(n), name=f"setcover-{n}x{m}-s{spec.seed}",
    )


def gen_cauction(spec: GenSpec) -> MilpInstance:
    """Bids on item bundles; each item sold at most once; maximize revenue."""
    n, m = spec.resolved_dims()
    if n < 1 or m < 1:
        raise ValueError("cauction needs n >= 1 and m >= 1")
    mean_bundle = float(spec.param("mean_bundle", 4.0))
    value_lo, value_hi = spec.param("value_range", (1.0, 100.0))
    markup = float(spec.param("markup", 0.2))
    rng = np.random.default_rng(spec.seed)
    base = rng.uniform(value_lo, value_hi, size=m)
    entries = {}
    price = np.empty(n)
    for j in range(n):
        k = int(np.clip(rng.geometric(1.0 / mean_bundle), 1, m))
        items = rng.choice(m, size=k, replace=False)
        for i in items:
            entries[(int(i), j)] = 1.0
        price[j] = base[items].sum() * (1.0 + rng.uniform(0.0, markup))
    rows, cols, vals = _coo(entries)
    return MilpInstance(
        c=-price, rows=rows, cols=cols, vals=vals, b=np.ones(m),
        l=np.zeros(n), u=np.ones(n), int_vars=np.arange(n), name=f"cauction-{n}x{m}-s{spec.seed}",
    )


def gen_facilities(spec: GenSpec) -> MilpInstance:
    """Capacitated facility location.

    Variables are ``x_f`` (open, binary) followed by ``y_{fc}`` (share of
    customer ``c`` served by ``f``) at index ``F + f*C + c``. Rows: each
    customer's shares sum to one (as a ``<=`` and a ``>=`` row), then
    ``sum_c d_c y_{fc} - cap_f x_f <= 0`` per facility.
    """
    F, C = spec.resolved_dims()
    if F < 1 or C < 1:
        raise ValueError("facilities needs at least one facility and one customer")
    fixed_lo, fixed_hi = spec.param("fixed_range", (100.0, 110.0))
    fixed_scale = float(spec.param("fixed_scale", 1.0))
    cost_scale = float(spec.param("cost_scale", 10.0))
    ratio = float(spec.param("capacity_ratio", 5.0))
    rng = np.random.default_rng(spec.seed)
    demand = rng.integers(5, 36, size=C).astype(np.float64)
    cap = rng.integers(10, 161, size=F).astype(np.float64)
    cap *= ratio * demand.sum() / cap.sum()
    fixed = rng.uniform(fixed_lo, fixed_hi, size=F) * fixed_scale
    fac_xy = rng.uniform(size=(F, 2))
    cus_xy = rng.uniform(size=(C, 2))
    dist = np.linalg.norm(fac_xy[:, None, :] - cus_xy[None, :, :], axis=2)
    assign = dist * demand[None, :] * cost_scale

    n = F + F * C
    entries = {}
    for c_ in range(C):
        for f in range(F):
            entries[(c_, F + f * C + c_)] = 1.0
            entries[(C + c_, F + f * C + c_)] = -1.0
    for f in range(F):
        row = 2 * C + f
        for c_ in range(C):
            entries[(row, F + f * C + c_)] = demand[c_]
        entries[(row, f)] = -cap[f]
    rows, cols, vals = _coo(entries)
    b = np.concatenate([np.ones(C), -np.ones(C), np.zeros(F)])
    return MilpInstance(
        c=np.concatenate([fixed, assign.ravel()]), rows=rows, cols=cols, vals=vals, b=b,
        l=np.zeros(n), u=np.ones(n), int_vars=np.arange(F), name=f"facilities-{F}x{C}-s{spec.seed}",
    )


def barabasi_albert(n: int, affinity: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Preferential-attachment edges ``(u, v)`` with ``u < v``, sorted."""
    if n <= affinity:
        return [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = {(u, v) for u in range(affinity + 1) for v in range(u + 1, affinity + 1)}
    degree = np.zeros(n)
    degree[: affinity + 1] = affinity
    for new in range(affinity + 1, n):
        p = degree[:new] / degree[:new].sum()
        targets = rng.choice(new, size=affinity, replace=False, p=p)
        for t in targets:
            edges.add((int(t), new))
            degree[t] += 1
        degree[new] = affinity
    return sorted(edges)


def gen_indset(spec: GenSpec) -> MilpInstance:
    """Maximum independent set on a Barabasi-Albert graph."""
    (nodes,) = spec.resolved_dims()
    if nodes < 1:
        raise ValueError("indset needs at least one node")
    affinity = int(spec.param("affinity", 4))
    rng = np.random.default_rng(spec.seed)
    edges = barabasi_albert(nodes, affinity, rng)
    m = len(edges)
    rows = np.repeat(np.arange(m), 2)
    cols = np.array([v for e in edges for v in e], dtype=np.int64)
    return MilpInstance(
        c=-np.ones(nodes), rows=rows, cols=cols, vals=np.ones(2 * m), b=np.ones(m),
        l=np.zeros(nodes), u=np.ones(nodes), int_vars=np.arange(nodes), name=f"indset-{nodes}-s{spec.seed}",
    )


GENERATORS = {"setcover": gen_setcover, "cauction": gen_cauction, "facilities": gen_facilities, "indset": gen_indset}


def generate(spec: GenSpec) -> MilpInstance:
    return GENERATORS[spec.family](spec)
