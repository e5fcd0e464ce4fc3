"""Reverse-mode automatic differentiation over numpy arrays.

Every backward function is itself written in terms of the primitives below, so
gradients computed with ``create_graph=True`` are differentiable again. The
discriminator gradient penalty needs exactly that: the penalty is built from
the input gradient of the logit and then differentiated with respect to the
discriminator parameters.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from . import backend

_GRAD_STACK = [True]


def is_grad_enabled() -> bool:
    return _GRAD_STACK[-1]


@contextlib.contextmanager
def set_grad_enabled(flag: bool):
    _GRAD_STACK.append(bool(flag))
    try:
        yield
    finally:
        _GRAD_STACK.pop()


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    """An ndarray plus the bookkeeping needed to replay the chain rule."""

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, parents=(), grad_fn=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def astensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _co(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Cast constant 0-d operands to the other side's float dtype so python
    scalars don't promote float32 graphs to float64."""
    if (
        not a.requires_grad
        and a.ndim == 0
        and b.dtype.kind == "f"
        and a.dtype != b.dtype
    ):
        a = Tensor(a.data.astype(b.dtype))
    elif (
        not b.requires_grad
        and b.ndim == 0
        and a.dtype.kind == "f"
        and b.dtype != a.dtype
    ):
        b = Tensor(b.data.astype(a.dtype))
    return a, b


def _out(data, parents, grad_fn) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), grad_fn)
    return Tensor(data)


def _sum_to(g: Tensor, shape) -> Tensor:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.shape != tuple(shape):
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _co(astensor(a), astensor(b))
    return _out(a.data + b.data, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a, b):
    a, b = _co(astensor(a), astensor(b))
    return _out(a.data - b.data, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(neg(g), b.shape)))


def mul(a, b):
    a, b = _co(astensor(a), astensor(b))
    return _out(a.data * b.data, (a, b), lambda g: (_sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)))


def div(a, b):
    a, b = _co(astensor(a), astensor(b))

    def grad_fn(g):
        ga = _sum_to(div(g, b), a.shape)
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _out(a.data / b.data, (a, b), grad_fn)


def neg(a):
    a = astensor(a)
    return _out(-a.data, (a,), lambda g: (neg(g),))


def pow_const(a, p):
    a = astensor(a)
    p = float(p)
    if p == 2.0:
        return _out(a.data * a.data, (a,), lambda g: (mul(g, mul(a, 2.0)),))
    return _out(a.data**p, (a,), lambda g: (mul(g, mul(pow_const(a, p - 1.0), p)),))


def exp(a):
    a = astensor(a)
    out = _out(np.exp(a.data), (a,), None)
    if out.requires_grad:
        out._grad_fn = lambda g: (mul(g, out),)
    return out


def log(a):
    a = astensor(a)
    return _out(np.log(a.data), (a,), lambda g: (div(g, a),))


def tanh(a):
    a = astensor(a)
    out = _out(np.tanh(a.data), (a,), None)
    if out.requires_grad:
        out._grad_fn = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def sigmoid(a):
    a = astensor(a)
    d = np.empty_like(a.data)
    pos = a.data >= 0
    d[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    d[~pos] = ex / (1.0 + ex)
    out = _out(d, (a,), None)
    if out.requires_grad:
        out._grad_fn = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def softplus(a):
    """log(1 + exp(a)) in the overflow-safe form."""
    a = astensor(a)
    d = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)
    return _out(d, (a,), lambda g: (mul(g, sigmoid(a)),))


def safe_recip(a):
    """1/a with 0 -> 0; keeps zero-variance statistics finite."""
    a = astensor(a)
    with np.errstate(divide="ignore"):
        d = np.where(a.data == 0, 0.0, 1.0 / a.data).astype(a.dtype)

    def grad_fn(g):
        r = safe_recip(a)
        return (neg(mul(g, mul(r, r))),)

    return _out(d, (a,), grad_fn)


def sqrt(a):
    """Elementwise sqrt; the derivative at exactly 0 is taken as 0."""
    a = astensor(a)
    out = _out(np.sqrt(a.data), (a,), None)
    if out.requires_grad:
        out._grad_fn = lambda g: (mul(g, mul(safe_recip(out), 0.5)),)
    return out


def leaky_relu(a, slope=0.2):
    a = astensor(a)
    one = a.dtype.type(1.0) if a.dtype.kind == "f" else np.float64(1.0)
    mask = np.where(a.data > 0, one, a.dtype.type(slope) if a.dtype.kind == "f" else slope)
    return _out(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),))


def relu(a):
    return leaky_relu(a, 0.0)


# ---------------------------------------------------------------------------
# shape primitives
# ---------------------------------------------------------------------------


def reshape(a, shape):
    a = astensor(a)
    old = a.shape
    return _out(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),))


def transpose(a, axes):
    a = astensor(a)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _out(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),))


def broadcast_to(a, shape):
    a = astensor(a)
    old = a.shape
    return _out(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_sum_to(g, old),))


def sum_(a, axis=None, keepdims=False):
    a = astensor(a)
    old = a.shape

    def grad_fn(g):
        if axis is None:
            gg = reshape(g, (1,) * len(old)) if old else g
            return (broadcast_to(gg, old),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % len(old) for ax in axes)
        if not keepdims:
            kshape = tuple(1 if i in axes else s for i, s in enumerate(old))
            g = reshape(g, kshape)
        return (broadcast_to(g, old),)

    return _out(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a, axis=None, keepdims=False):
    a = astensor(a)
    n = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def max_(a, axis, keepdims=False):
    a = astensor(a)
    d = a.data.max(axis=axis, keepdims=True)
    mask = (a.data == d).astype(a.dtype)
    mask /= mask.sum(axis=axis, keepdims=True)
    old = a.shape

    def grad_fn(g):
        if not keepdims:
            kshape = tuple(1 if i == axis % len(old) else s for i, s in enumerate(old))
            g = reshape(g, kshape)
        return (mul(broadcast_to(g, old), Tensor(mask)),)

    return _out(d if keepdims else d.squeeze(axis=axis), (a,), grad_fn)


def concat(tensors: Sequence, axis: int):
    tensors = [astensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]

    def grad_fn(g):
        grads, start = [], 0
        for s in sizes:
            grads.append(slice_axis(g, axis, start, start + s))
            start += s
        return tuple(grads)

    return _out(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


def slice_axis(a, axis: int, start: int, stop: int):
    a = astensor(a)
    n = a.shape[axis]
    sl = tuple(slice(start, stop) if i == axis % a.ndim else slice(None) for i in range(a.ndim))
    return _out(
        np.ascontiguousarray(a.data[sl]),
        (a,),
        lambda g: (pad_axis(g, axis, start, n - stop),),
    )


def pad_axis(a, axis: int, before: int, after: int):
    a = astensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis % a.ndim] = (before, after)
    start, stop = before, before + a.shape[axis]
    return _out(np.pad(a.data, widths), (a,), lambda g: (slice_axis(g, axis, start, stop),))


# ---------------------------------------------------------------------------
# linear algebra / conv primitives
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = astensor(a), astensor(b)

    def grad_fn(g):
        return matmul(g, transpose(b, (1, 0))), matmul(transpose(a, (1, 0)), g)

    return _out(a.data @ b.data, (a, b), grad_fn)


def im2col(a, k: int, stride: int, pad: int):
    a = astensor(a)
    shape = a.shape
    return _out(
        backend.im2col(a.data, k, stride, pad),
        (a,),
        lambda g: (col2im(g, shape, k, stride, pad),),
    )


def col2im(a, shape, k: int, stride: int, pad: int):
    a = astensor(a)
    return _out(
        backend.col2im(a.data, shape, k, stride, pad),
        (a,),
        lambda g: (im2col(g, k, stride, pad),),
    )


def upsample2x(a):
    """Nearest-neighbour x2 on the trailing two axes."""
    a = astensor(a)
    d = a.data.repeat(2, axis=-2).repeat(2, axis=-1)
    return _out(d, (a,), lambda g: (sumpool2x(g),))


def sumpool2x(a):
    a = astensor(a)
    b, c, h, w = a.shape
    d = a.data.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
    return _out(d, (a,), lambda g: (upsample2x(g),))


def avgpool2x(a):
    return mul(sumpool2x(a), 0.25)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order  # parents before children


def grad(
    output: Tensor,
    wrt: Iterable[Tensor],
    grad_output: Tensor | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of `output` w.r.t. each tensor in `wrt`.

    Tensors in `wrt` that the output does not depend on get a zero gradient.
    With create_graph=True the returned gradients carry their own graph and
    can be differentiated again.
    """
    wrt = list(wrt)
    if not output.requires_grad:
        return [Tensor(np.zeros(w.shape, dtype=w.dtype)) for w in wrt]
    if grad_output is None:
        grad_output = Tensor(np.ones(output.shape, dtype=output.dtype))

    order = _toposort(output)
    # restrict work to nodes on a path from some wrt tensor to the output
    wanted = {id(w) for w in wrt}
    needed: set[int] = set()
    for node in order:
        if id(node) in wanted or any(id(p) in needed for p in node._parents):
            needed.add(id(node))
    grads: dict[int, Tensor] = {id(output): grad_output}

    with set_grad_enabled(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._grad_fn is None or id(node) not in needed:
                continue
            for p, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not p.requires_grad or id(p) not in needed:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
            if id(node) not in wanted:
                del grads[id(node)]

    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(g if g is not None else Tensor(np.zeros(w.shape, dtype=w.dtype)))
    return out
