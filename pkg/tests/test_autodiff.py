"""Finite-difference checks for every primitive the networks rely on,
including gradients of gradients (the penalty path)."""
import numpy as np
import pytest

import retsyn.autodiff as ad
from retsyn.autodiff import Tensor, grad


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
        it.iternext()
    return g


UNARY = [
    ("exp", ad.exp, 0.5),
    ("log", lambda t: ad.log(ad.add(ad.mul(t, t), 1.5)), 1.0),
    ("tanh", ad.tanh, 1.0),
    ("sigmoid", ad.sigmoid, 1.5),
    ("softplus", ad.softplus, 2.0),
    ("sqrt", lambda t: ad.sqrt(ad.add(ad.mul(t, t), 0.3)), 1.0),
    ("leaky", lambda t: ad.leaky_relu(t, 0.2), 1.3),
    ("pow3", lambda t: ad.pow_const(t, 3), 0.8),
]


@pytest.mark.parametrize("name,op,scale", UNARY)
def test_unary_gradients(name, op, scale):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = (rng.standard_normal((3, 4)) * scale) + 0.1
    weights = np.random.default_rng(9).standard_normal((3, 4))
    t = Tensor(x, requires_grad=True)
    loss = ad.sum_(ad.mul(op(t), Tensor(weights)))
    (g,) = grad(loss, [t])
    fd = fd_grad(lambda: float(ad.sum_(ad.mul(op(Tensor(x)), Tensor(weights))).data), x)
    assert np.allclose(g.data, fd, rtol=1e-4, atol=1e-6), name


def test_broadcast_binary_gradients():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 1, 4))
    b = rng.standard_normal((2, 4)) + 2.0
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    loss = ad.sum_(ad.div(ad.mul(ta, tb), ad.add(ad.pow_const(tb, 2), 1.0)))
    ga, gb = grad(loss, [ta, tb])

    def f():
        return float(
            ad.sum_(ad.div(ad.mul(Tensor(a), Tensor(b)), ad.add(ad.pow_const(Tensor(b), 2), 1.0))).data
        )

    assert np.allclose(ga.data, fd_grad(f, a), rtol=1e-5, atol=1e-7)
    assert np.allclose(gb.data, fd_grad(f, b), rtol=1e-5, atol=1e-7)


def test_matmul_reshape_transpose_concat_slice_grads():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 5))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)

    def build(ta, tb):
        m = ad.matmul(ta, tb)  # (4,5)
        m = ad.transpose(m, (1, 0))  # (5,4)
        m = ad.reshape(m, (2, 10))
        m = ad.concat([m, ad.mul(m, 0.5)], axis=0)  # (4,10)
        m = ad.slice_axis(m, 1, 2, 9)
        return ad.sum_(ad.tanh(m))

    loss = build(ta, tb)
    ga, gb = grad(loss, [ta, tb])
    fa = fd_grad(lambda: float(build(Tensor(a), Tensor(b)).data), a)
    fb = fd_grad(lambda: float(build(Tensor(a), Tensor(b)).data), b)
    assert np.allclose(ga.data, fa, rtol=1e-5, atol=1e-7)
    assert np.allclose(gb.data, fb, rtol=1e-5, atol=1e-7)


def test_pool_and_upsample_grads():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 4, 4))
    t = Tensor(x, requires_grad=True)

    def build(t):
        u = ad.upsample2x(t)
        d = ad.avgpool2x(ad.mul(u, u))
        return ad.sum_(ad.max_(ad.reshape(d, (2, -1)), axis=1))

    (g,) = grad(build(t), [t])
    fd = fd_grad(lambda: float(build(Tensor(x)).data), x)
    assert np.allclose(g.data, fd, rtol=1e-5, atol=1e-7)


def test_im2col_conv_grad():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((2 * 9, 3))
    tx, tw = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)

    def build(tx, tw):
        cols = ad.im2col(tx, 3, 1, 1)
        return ad.sum_(ad.tanh(ad.matmul(cols, tw)))

    gx, gw = grad(build(tx, tw), [tx, tw])
    fx = fd_grad(lambda: float(build(Tensor(x), Tensor(w)).data), x)
    fw = fd_grad(lambda: float(build(Tensor(x), Tensor(w)).data), w)
    assert np.allclose(gx.data, fx, rtol=1e-5, atol=1e-7)
    assert np.allclose(gw.data, fw, rtol=1e-5, atol=1e-7)


def test_double_backward_matches_fd():
    # P(w) = || d/dx sum(tanh(x @ w)) ||^2 differentiated w.r.t. w
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((3, 2))
    tw = Tensor(w, requires_grad=True)

    def penalty(tw):
        tx = Tensor(x, requires_grad=True)
        s = ad.sum_(ad.tanh(ad.matmul(tx, tw)))
        (gx,) = grad(s, [tx], create_graph=True)
        return ad.sum_(ad.pow_const(gx, 2))

    (gw,) = grad(penalty(tw), [tw])
    fd = fd_grad(lambda: float(penalty(Tensor(w)).data), w)
    assert np.allclose(gw.data, fd, rtol=1e-4, atol=1e-7)


def test_grad_of_unused_input_is_zero():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    loss = ad.sum_(ad.mul(a, 2.0))
    ga, gb = grad(loss, [a, b])
    assert np.allclose(ga.data, 2.0)
    assert np.allclose(gb.data, 0.0)


def test_no_grad_blocks_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = ad.mul(a, 3.0)
    assert not out.requires_grad


def test_scalar_constants_keep_float32():
    a = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    out = ad.add(ad.mul(a, 2.0), 0.25)
    assert out.dtype == np.float32


def test_accumulation_when_tensor_used_twice():
    x = np.array([1.5, -0.5])
    t = Tensor(x, requires_grad=True)
    loss = ad.sum_(ad.add(ad.mul(t, t), ad.mul(t, 3.0)))
    (g,) = grad(loss, [t])
    assert np.allclose(g.data, 2 * x + 3)
