import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudogames import autodiff as ad
from pseudogames.policies import jacobian_fd


def _grad_of(fn, x0):
    x = ad.leaf(x0)
    out = fn(x)
    (g,) = ad.grad(ad.sum_(out), [x])
    return g


def _fd_grad(fn, x0, h=1e-6):
    def scalar(v):
        return float(np.sum(ad.value_of(fn(v.reshape(x0.shape)))))

    flat = x0.ravel()
    g = np.zeros_like(flat)
    for j in range(flat.size):
        dp = flat.copy()
        dm = flat.copy()
        dp[j] += h
        dm[j] -= h
        g[j] = (scalar(dp) - scalar(dm)) / (2 * h)
    return g.reshape(x0.shape)


UNARY = [
    ad.tanh,
    ad.sigmoid,
    ad.softplus,
    ad.exp,
    lambda x: ad.log(ad.add(ad.mul(x, x), 1.5)),
    lambda x: ad.softmax(x, axis=-1),
    lambda x: ad.logsumexp(x, axis=-1),
    lambda x: ad.mul(x, ad.sigmoid(x)),
    lambda x: ad.reshape(ad.mul(x, 2.0), (-1,)),
    lambda x: ad.maximum_const(x, 0.1),
]


@pytest.mark.parametrize("fn", UNARY)
def test_unary_vjps_match_finite_differences(fn, rng):
    x0 = rng.normal(size=(3, 4)) * 1.5 + 0.3
    g = _grad_of(fn, x0)
    g_fd = _fd_grad(fn, x0)
    assert np.allclose(g, g_fd, rtol=1e-6, atol=1e-7)


def test_matmul_vjps(rng):
    A0 = rng.normal(size=(3, 4))
    B0 = rng.normal(size=(4, 2))
    A, B = ad.leaf(A0), ad.leaf(B0)
    out = ad.sum_(ad.matmul(A, B))
    gA, gB = ad.grad(out, [A, B])
    assert np.allclose(gA, _fd_grad(lambda a: ad.matmul(a, B0), A0))
    assert np.allclose(gB, _fd_grad(lambda b: ad.matmul(A0, b), B0))


def test_batched_matmul_vjp(rng):
    A0 = rng.normal(size=(5, 3, 4))
    B0 = rng.normal(size=(5, 4, 2))
    A, B = ad.leaf(A0), ad.leaf(B0)
    out = ad.sum_(ad.matmul(A, B))
    gA, gB = ad.grad(out, [A, B])
    assert np.allclose(gA, _fd_grad(lambda a: ad.matmul(a, B0), A0))
    assert np.allclose(gB, _fd_grad(lambda b: ad.matmul(A0, b), B0))


def test_matvec_and_vecmat_vjps(rng):
    A0 = rng.normal(size=(3, 4))
    v0 = rng.normal(size=4)
    gA = _grad_of(lambda a: ad.matmul(a, v0), A0)
    assert np.allclose(gA, _fd_grad(lambda a: ad.matmul(a, v0), A0))
    gv = _grad_of(lambda v: ad.matmul(A0, v), v0)
    assert np.allclose(gv, _fd_grad(lambda v: ad.matmul(A0, v), v0))


def test_getitem_concat_stack_roundtrip(rng):
    x0 = rng.normal(size=(4, 6))

    def fn(x):
        left = x[:, :2]
        right = x[:, 2:]
        both = ad.concat([ad.mul(left, 3.0), right], axis=1)
        return ad.stack([ad.sum_(both, axis=1), ad.sum_(both, axis=0)[:4]], axis=0)

    assert np.allclose(_grad_of(fn, x0), _fd_grad(fn, x0))


def test_broadcast_unreduction(rng):
    x0 = rng.normal(size=(1, 5))
    y0 = rng.normal(size=(4, 5))

    def fn(x):
        return ad.mul(x, y0)

    g = _grad_of(fn, x0)
    assert g.shape == x0.shape
    assert np.allclose(g, y0.sum(axis=0, keepdims=True))


def test_swap_last2(rng):
    x0 = rng.normal(size=(3, 4))
    fn = lambda x: ad.matmul(ad.swap_last2(x), np.ones(3))
    assert np.allclose(_grad_of(fn, x0), _fd_grad(fn, x0))


def test_where_const(rng):
    x0 = rng.normal(size=(8,))
    cond = x0 > 0
    fn = lambda x: ad.where_const(cond, ad.mul(x, 2.0), ad.mul(x, -1.0))
    assert np.allclose(_grad_of(fn, x0), np.where(cond, 2.0, -1.0))


def test_grad_accumulates_through_shared_subexpression(rng):
    x = ad.leaf(np.array([1.5]))
    y = ad.mul(x, x)          # x^2
    out = ad.add(ad.mul(y, 2.0), y)  # 3 x^2
    (g,) = ad.grad(out, [x])
    assert np.allclose(g, 6.0 * 1.5)


def test_plain_arrays_pass_through():
    x = np.array([0.2, -0.4])
    assert isinstance(ad.tanh(x), np.ndarray)
    assert isinstance(ad.softmax(x), np.ndarray)
    assert np.allclose(ad.softmax(x).sum(), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6))
def test_softmax_simplex_property(vals):
    p = ad.softmax(np.asarray(vals, dtype=np.float64))
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=5))
def test_softplus_dominates_relu(vals):
    z = np.asarray(vals, dtype=np.float64)
    sp = ad.softplus(z)
    assert np.all(sp >= np.maximum(z, 0.0) - 1e-12)
