"""Reverse-mode autodiff over dense 2-D float64 arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
propagating the output gradient back to them. :meth:`Tensor.backward` walks
the recorded graph in reverse topological order. Gradients accumulate in
``.grad``; call :func:`zero_grad` between steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeMismatch(ValueError):
    pass


class NonFinite(ValueError):
    pass


class GraphCycle(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "needs_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, _parents=(), _backward=None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {v.shape}")
        # a finite sum implies finite entries; only scan on the slow path
        if not np.isfinite(v.sum()) and not np.all(np.isfinite(v)):
            raise NonFinite("tensor values must be finite")
        self.value = v
        self.grad = None
        self.requires_grad = requires_grad
        self.needs_grad = requires_grad or any(p.needs_grad for p in _parents)
        self._parents = tuple(_parents) if self.needs_grad else ()
        self._backward = _backward if self.needs_grad else None

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g: np.ndarray) -> None:
        if not self.needs_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self) -> None:
        if self.shape != (1, 1):
            raise ShapeMismatch("backward needs a 1x1 loss")
        order = _topological(self)
        grads = {id(self): np.ones((1, 1))}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t._accum(g)
            if t._backward is not None:
                for p, pg in zip(t._parents, t._backward(g)):
                    if pg is None or not p.needs_grad:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _topological(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each before all of its parents."""
    order: list[Tensor] = []
    state: dict[int, int] = {}
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            state[id(t)] = 2
            order.append(t)
            continue
        s = state.get(id(t), 0)
        if s == 2:
            continue
        if s == 1:
            raise GraphCycle("cycle in the computation graph")
        state[id(t)] = 1
        stack.append((t, True))
        for p in t._parents:
            ps = state.get(id(p), 0)
            if ps == 1:
                raise GraphCycle("cycle in the computation graph")
            if ps == 0:
                stack.append((p, False))
    order.reverse()
    return order


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def constant(value) -> Tensor:
    return Tensor(value)


# -- ops ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.needs_grad else None, av.T @ g if b.needs_grad else None)

    return Tensor(av @ bv, _parents=(a, b), _backward=back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return Tensor(a.value + b.value, _parents=(a, b), _backward=lambda g: (g, g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a ``1 x d`` row to every row of ``x``."""
    if bias.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"bias {bias.shape} for input {x.shape}")
    return Tensor(x.value + bias.value, _parents=(x, bias),
                  _backward=lambda g: (g, g.sum(axis=0, keepdims=True)))


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeMismatch(f"row slice [{start}, {stop}) of {x.shape}")

    def back(g):
        out = np.zeros_like(x.value)
        out[start:stop] = g
        return (out,)

    return Tensor(x.value[start:stop], _parents=(x,), _backward=back)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return Tensor(np.where(mask, x.value, 0.0), _parents=(x,), _backward=lambda g: (g * mask,))


def sum_rows(x: Tensor) -> Tensor:
    """Column sums as a ``1 x d`` row."""
    n = x.shape[0]
    return Tensor(x.value.sum(axis=0, keepdims=True), _parents=(x,),
                  _backward=lambda g: (np.repeat(g, n, axis=0),))


def concat_cols(*xs: Tensor) -> Tensor:
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols with row counts {sorted(rows)}")
    widths = np.cumsum([0] + [x.shape[1] for x in xs])
    return Tensor(np.hstack([x.value for x in xs]), _parents=xs,
                  _backward=lambda g: tuple(g[:, widths[k]:widths[k + 1]] for k in range(len(xs))))


def _index(idx, limit: int) -> np.ndarray:
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1)
    if len(idx) and (idx.min() < 0 or idx.max() >= limit):
        raise ShapeMismatch(f"row index out of range [0, {limit})")
    return idx


def gather_rows(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]``; indices may repeat."""
    idx = _index(idx, x.shape[0])
    n, d = x.shape

    def back(g):
        out = np.zeros((n, d))
        kernels.scatter_add(out, idx, np.ascontiguousarray(g))
        return (out,)

    return Tensor(x.value[idx], _parents=(x,), _backward=back)


def scatter_add_rows(idx, src: Tensor, n_rows: int) -> Tensor:
    """``out[idx[k]] += src[k]`` into ``n_rows`` zero rows, accumulated in ``k`` order."""
    idx = _index(idx, n_rows)
    if len(idx) != src.shape[0]:
        raise ShapeMismatch(f"{len(idx)} indices for {src.shape[0]} source rows")
    out = np.zeros((n_rows, src.shape[1]))
    kernels.scatter_add(out, idx, np.ascontiguousarray(src.value))
    return Tensor(out, _parents=(src,), _backward=lambda g: (g[idx],))


def custom_scalar(x: Tensor, fn) -> Tensor:
    """Scalar op whose value and gradient come from ``fn(x.value) -> (float, grad)``."""
    value, grad = fn(x.value)
    grad = np.asarray(grad, dtype=np.float64).reshape(x.shape)
    return Tensor(np.array([[value]]), _parents=(x,), _backward=lambda g: (g[0, 0] * grad,))


def mean_of(xs: list[Tensor]) -> Tensor:
    """Average of 1x1 tensors."""
    if not xs:
        raise ShapeMismatch("mean of nothing")
    k = len(xs)
    return Tensor(np.array([[sum(x.value[0, 0] for x in xs) / k]]), _parents=tuple(xs),
                  _backward=lambda g: tuple(g / k for _ in range(k)))


# -- modules -----------------------------------------------------------------

INITS = ("uniform", "he")


class Mlp:
    """Fully connected network: ReLU between layers, identity output."""

    def __init__(self, dims: list[int], rng: np.random.Generator | None = None, init: str = "uniform"):
        """``init="uniform"`` draws weights from U(+-1/sqrt(fan_in)); ``"he"`` from U(+-sqrt(6/fan_in)).

        Biases are U(+-1/sqrt(fan_in)) either way.
        """
        if len(dims) < 2:
            raise ShapeMismatch("an MLP needs at least one layer")
        if init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.dims = list(dims)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for din, dout in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(din)
            w_bound = np.sqrt(6.0 / din) if init == "he" else bound
            self.weights.append(parameter(rng.uniform(-w_bound, w_bound, size=(din, dout))))
            self.biases.append(parameter(rng.uniform(-bound, bound, size=(1, dout))))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.dims[0]:
            raise ShapeMismatch(f"MLP expects width {self.dims[0]}, got {x.shape[1]}")
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = add_bias(matmul(x, w), b)
            if k < last:
                x = relu(x)
        return x

    def gathered(self, parts) -> Tensor:
        """``self(concat_cols(*[gather_rows(x, idx) ...]))`` without materializing the concat.

        ``parts`` is a list of ``(tensor, row_index or None)``. The first layer
        is applied to each part before gathering, which is the same function
        but costs a projection per source row instead of per gathered row.
        """
        width = sum(x.shape[1] for x, _ in parts)
        if width != self.dims[0]:
            raise ShapeMismatch(f"MLP expects width {self.dims[0]}, got {width}")
        w0, b0 = self.weights[0], self.biases[0]
        h, start = None, 0
        for x, idx in parts:
            stop = start + x.shape[1]
            proj = matmul(x, slice_rows(w0, start, stop))
            if idx is not None:
                proj = gather_rows(proj, idx)
            h = proj if h is None else add(h, proj)
            start = stop
        h = add_bias(h, b0)
        last = len(self.weights) - 1
        for k in range(1, last + 1):
            h = add_bias(matmul(relu(h), self.weights[k]), self.biases[k])
        return h

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def to_lists(self) -> list:
        return [p.value.tolist() for p in self.parameters()]

    def load_lists(self, arrays: list) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeMismatch(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeMismatch(f"array shape {a.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(a)):
                raise NonFinite("non-finite weight")
            p.value = a.copy()


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: AdamState, lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``. ``None`` grads count as zero."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    """Adam bound to a list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, self.betas, self.eps)
