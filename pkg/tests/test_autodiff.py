"""Finite-difference checks for the reverse-mode engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emshap.autodiff import Tensor, as_tensor, backward, concat


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = fn(x)
        flat[i] = old - eps
        fm = fn(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def check_op(build, shape, seed=0, tol=1e-6):
    """Compare autodiff and numeric gradients of a scalar-valued op."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    t = Tensor(x.copy(), requires_grad=True)
    loss = build(t)
    (grad,) = backward(loss, [t])
    num = numeric_grad(lambda a: build(Tensor(a)).item(), x.copy())
    np.testing.assert_allclose(grad, num, rtol=tol, atol=tol)


@pytest.mark.parametrize("build", [
    lambda t: (t * 3.0 + 1.0).sum(),
    lambda t: (t * t).sum(),
    lambda t: (t / (t * t + 2.0)).sum(),
    lambda t: (-t).exp().sum(),
    lambda t: t.tanh().sum(),
    lambda t: t.sigmoid().sum(),
    lambda t: t.softplus().sum(),
    lambda t: (t ** 3.0).mean(),
    lambda t: t.logsumexp(axis=1).sum(),
    lambda t: t.logsumexp(axis=0, keepdims=True).sum(),
    lambda t: t.sum(axis=0).logsumexp(axis=0),
    lambda t: t.reshape(12).sum(axis=0),
    lambda t: t[1:, :2].sum(),
    lambda t: t[np.array([0, 2, 2]), :].sum(),
])
def test_elementwise_and_reduction_gradients(build):
    check_op(build, (3, 4))


def test_log_gradient():
    check_op(lambda t: (t.softplus() + 0.1).log().sum(), (3, 4))


def test_matmul_gradients():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    ta = Tensor(a.copy(), requires_grad=True)
    tb = Tensor(b.copy(), requires_grad=True)
    loss = (ta @ tb).tanh().sum()
    ga, gb = backward(loss, [ta, tb])
    num_a = numeric_grad(lambda x: float(np.sum(np.tanh(x @ b))), a.copy())
    num_b = numeric_grad(lambda x: float(np.sum(np.tanh(a @ x))), b.copy())
    np.testing.assert_allclose(ga, num_a, atol=1e-6)
    np.testing.assert_allclose(gb, num_b, atol=1e-6)


def test_broadcast_add_unbroadcasts_gradient():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    tb = Tensor(b.copy(), requires_grad=True)
    loss = ((as_tensor(a) + tb) ** 2.0).sum()
    (gb,) = backward(loss, [tb])
    num = numeric_grad(lambda x: float(np.sum((a + x) ** 2)), b.copy())
    np.testing.assert_allclose(gb, num, atol=1e-6)


def test_concat_gradient():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 2))
    ta = Tensor(a.copy(), requires_grad=True)
    tb = Tensor(b.copy(), requires_grad=True)
    loss = concat([ta, tb], axis=1).sigmoid().sum()
    ga, gb = backward(loss, [ta, tb])
    num_a = numeric_grad(
        lambda x: float(np.sum(1 / (1 + np.exp(-np.concatenate([x, b], axis=1))))),
        a.copy())
    np.testing.assert_allclose(ga, num_a, atol=1e-6)
    assert gb.shape == b.shape


def test_diamond_graph_accumulates_both_paths():
    t = Tensor(np.array([2.0]), requires_grad=True)
    y = t * t + t * 3.0  # dy/dt = 2t + 3 = 7
    (g,) = backward(y.sum(), [t])
    np.testing.assert_allclose(g, [7.0])


def test_unreached_parameter_gets_zero_gradient():
    used = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    (gu, gn) = backward((used * 2.0).sum(), [used, unused])
    np.testing.assert_allclose(gu, [2.0, 2.0])
    np.testing.assert_allclose(gn, np.zeros(3))


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_backward_clears_stale_gradients():
    t = Tensor(np.ones(2), requires_grad=True)
    backward((t * 2.0).sum(), [t])
    (g,) = backward((t * 5.0).sum(), [t])
    np.testing.assert_allclose(g, [5.0, 5.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=1, max_value=5),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_logsumexp_matches_reference(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 10
    out = Tensor(x).logsumexp(axis=1).data
    ref = np.log(np.exp(x - x.max(axis=1, keepdims=True)).sum(axis=1)) + x.max(axis=1)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_large_inputs_stay_finite():
    x = Tensor(np.array([800.0, -800.0]))
    assert np.isfinite(x.softplus().data).all()
    assert np.isfinite(x.sigmoid().data).all()
    assert np.isfinite(x.reshape(1, 2).logsumexp(axis=1).data).all()
