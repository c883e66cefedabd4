import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchlab import autodiff as ad
from branchlab import kernels
from branchlab.autodiff import GraphCycle, NonFinite, ShapeMismatch, Tensor


def fd_check(build, params, h=1e-5):
    """Largest relative error between backward() and central differences."""
    ad.zero_grad(params)
    build().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad.copy()
        for idx in np.ndindex(p.shape):
            old = p.value[idx]
            p.value[idx] = old + h
            up = build().value[0, 0]
            p.value[idx] = old - h
            down = build().value[0, 0]
            p.value[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - analytic[idx]) / max(1e-6, abs(fd) + abs(analytic[idx])))
    return worst


def test_relu_values():
    assert ad.relu(Tensor([[-1.0, 2.0]])).value.tolist() == [[0.0, 2.0]]


def test_scatter_two_sources_one_row():
    out = ad.scatter_add_rows([0, 0], Tensor([[1.0, 2.0], [3.0, 4.0]]), 2)
    assert out.value.tolist() == [[4.0, 6.0], [0.0, 0.0]]


def test_sum_gradient_is_ones():
    W = ad.parameter(np.arange(6.0).reshape(2, 3))
    ad.sum_rows(ad.matmul(W, ad.constant(np.ones((3, 1))))).backward()
    np.testing.assert_array_equal(W.grad, np.ones((2, 3)))


def test_relu_dead_gradient_is_zero():
    W = ad.parameter(-np.ones((2, 2)))
    loss = ad.sum_rows(ad.matmul(ad.relu(W), ad.constant(np.ones((2, 1)))))
    loss.backward()
    np.testing.assert_array_equal(W.grad, np.zeros((2, 2)))


def test_composite_graph_fd():
    rng = np.random.default_rng(0)
    for _ in range(5):
        X = ad.parameter(rng.normal(size=(5, 3)))
        W = ad.parameter(rng.normal(size=(3, 4)))
        b = ad.parameter(rng.normal(size=(1, 4)))
        V = ad.parameter(rng.normal(size=(8, 1)))
        idx = rng.integers(0, 5, size=7)
        tgt = rng.integers(0, 3, size=7)

        def build():
            h = ad.relu(ad.add_bias(ad.matmul(X, W), b))
            g = ad.gather_rows(h, idx)
            s = ad.scatter_add_rows(tgt, g, 3)
            c = ad.concat_cols(s, ad.slice_rows(h, 1, 4))
            z = ad.matmul(c, V)
            return ad.custom_scalar(ad.sum_rows(ad.add(z, z)), lambda v: (float(np.tanh(v).sum()), 1 - np.tanh(v) ** 2))

        assert fd_check(build, [X, W, b, V]) < 1e-4


def test_mlp_gathered_equals_concat():
    rng = np.random.default_rng(1)
    mlp = ad.Mlp([5, 8, 2], rng)
    A = ad.parameter(rng.normal(size=(4, 3)))
    B = ad.parameter(rng.normal(size=(6, 2)))
    ia, ib = rng.integers(0, 4, size=9), rng.integers(0, 6, size=9)
    ref = mlp(ad.concat_cols(ad.gather_rows(A, ia), ad.gather_rows(B, ib)))
    fast = mlp.gathered([(A, ia), (B, ib)])
    np.testing.assert_allclose(fast.value, ref.value, atol=1e-12)

    def build():
        return ad.sum_rows(ad.matmul(ad.relu(mlp.gathered([(A, ia), (B, ib)])), ad.constant(np.ones((2, 1)))))

    assert fd_check(build, [A, B] + mlp.parameters()) < 1e-4


def test_gradients_accumulate():
    W = ad.parameter(np.ones((1, 1)))
    loss = ad.matmul(W, ad.constant([[3.0]]))
    loss.backward()
    loss.backward()
    assert W.grad[0, 0] == 6.0


def test_shared_subexpression():
    W = ad.parameter([[2.0]])
    h = ad.matmul(W, W)
    ad.add(h, h).backward()
    assert W.grad[0, 0] == pytest.approx(8.0)


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeMismatch):
        ad.gather_rows(Tensor(np.ones((2, 1))), [2])
    with pytest.raises(ShapeMismatch):
        ad.concat_cols(Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1))))
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 2))).backward()
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 2, 2)))


def test_non_finite_rejected():
    with pytest.raises(NonFinite):
        Tensor([[np.nan]])
    with pytest.raises(NonFinite):
        ad.Mlp([1, 1]).load_lists([[[np.inf]], [[0.0]]])


def test_cycle_detected():
    a = ad.parameter([[1.0]])
    b = ad.matmul(a, ad.constant([[2.0]]))
    c = ad.matmul(b, ad.constant([[2.0]]))
    b._parents = (c,)  # forge a cycle
    with pytest.raises(GraphCycle):
        c.backward()


def test_scatter_gradient_backends_agree():
    rng = np.random.default_rng(2)
    idx = rng.integers(0, 10, size=200)
    src = rng.normal(size=(200, 3))
    outs = []
    for name in kernels.available_backends():
        with kernels.use_backend(name):
            outs.append(ad.scatter_add_rows(idx, Tensor(src), 10).value)
    ref = np.zeros((10, 3))
    np.add.at(ref, idx, src)
    for o in outs:
        np.testing.assert_allclose(o, ref, atol=1e-12)


def test_adam_zero_grad_keeps_params():
    p = np.array([[1.0, -2.0]])
    state = ad.adam_step([p], [np.zeros((1, 2))], ad.AdamState())
    assert state.step == 1 and p.tolist() == [[1.0, -2.0]]
    ad.adam_step([p], [None], state)
    assert state.step == 2 and p.tolist() == [[1.0, -2.0]]


def test_adam_first_step_is_lr():
    p = np.array([[0.5]])
    ad.adam_step([p], [np.array([[1.0]])], ad.AdamState(), lr=0.1)
    assert p[0, 0] == pytest.approx(0.4, abs=1e-6)


def test_adam_matches_reference_formula():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(2, 2))
    ref = p.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    state = ad.AdamState()
    for t in range(1, 6):
        g = rng.normal(size=(2, 2))
        ad.adam_step([p], [g], state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, atol=1e-14)


def test_adam_quadratic_bowl():
    target = np.array([[1.0, -2.0, 0.5]])
    W = ad.parameter(np.zeros((1, 3)))
    opt = ad.Adam([W], lr=0.05)
    for step in range(2000):
        ad.zero_grad([W])
        d = ad.add(W, ad.constant(-target))
        ad.custom_scalar(d, lambda v: (float((v ** 2).sum()), 2 * v)).backward()
        opt.step()
        if float(((W.value - target) ** 2).sum()) < 1e-6:
            break
    assert float(((W.value - target) ** 2).sum()) < 1e-6
    assert step < 2000


def test_mlp_roundtrip():
    rng = np.random.default_rng(4)
    a, b = ad.Mlp([3, 5, 1], rng), ad.Mlp([3, 5, 1], rng)
    b.load_lists(a.to_lists())
    x = Tensor(rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(a(x).value, b(x).value)
    with pytest.raises(ShapeMismatch):
        b.load_lists(a.to_lists()[:2])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_matmul_fd_hypothesis(n, k, seed):
    rng = np.random.default_rng(seed)
    A = ad.parameter(rng.normal(size=(n, k)))
    B = ad.parameter(rng.normal(size=(k, 2)))
    u = ad.constant(rng.normal(size=(2, 1)))

    def build():
        return ad.sum_rows(ad.matmul(ad.matmul(A, B), u))

    assert fd_check(build, [A, B]) < 1e-6
