"""Minimal reverse-mode automatic differentiation over NumPy arrays.

The functional API (`add`, `matmul`, `tanh`, ...) dispatches on input type:
plain ndarrays flow through NumPy untouched, while `Var` inputs record a
tape node with a vector-Jacobian closure. Model code is therefore written
once and runs in both a no-gradient mode and a gradient mode.

Only float64 arrays are supported. Graphs are built per evaluation and
never reused, so gradients accumulate on fresh leaves each call.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var", "leaf", "value_of", "backward", "grad",
    "add", "sub", "mul", "div", "neg", "matmul", "dot_last",
    "sum_", "mean_", "tanh", "sigmoid", "softplus", "exp", "log",
    "square", "maximum_const", "softmax", "logsumexp", "concat",
    "stack", "reshape", "swap_last2", "getitem", "where_const", "relu",
]


class Var:
    """A tape node: an array value plus how to push gradients to parents."""

    __slots__ = ("value", "grad", "parents", "vjp", "order")
    _counter = 0

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        Var._counter += 1
        self.order = Var._counter

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Var(shape={self.shape})"


def leaf(x):
    """Wrap an array as a differentiable leaf."""
    return Var(np.asarray(x, dtype=np.float64))


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _node(out, inputs, full_vjp):
    """Build a Var whose vjp is aligned with its Var inputs only."""
    parents = tuple(x for x in inputs if isinstance(x, Var))

    def vjp(g):
        grads = full_vjp(g)
        return tuple(gi for x, gi in zip(inputs, grads) if isinstance(x, Var))

    return Var(out, parents, vjp)


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after NumPy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(out, seed=None):
    """Accumulate gradients of ``out`` (seeded if not scalar) on all leaves."""
    if not isinstance(out, Var):
        raise TypeError("backward() expects a Var")
    if seed is None:
        seed = np.ones_like(out.value)
    out.grad = np.asarray(seed, dtype=np.float64)
    visited = {}
    stack = [out]
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited[id(node)] = node
        stack.extend(node.parents)
    # Creation order is a valid topological order: parents precede children.
    for node in sorted(visited.values(), key=lambda v: -v.order):
        if node.grad is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(node.grad)):
            if pg is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + pg


def grad(out, wrt, seed=None):
    """Gradients of ``out`` with respect to a list of leaves."""
    backward(out, seed=seed)
    return [
        (w.grad if w.grad is not None else np.zeros_like(w.value)) for w in wrt
    ]


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    if not _is_var(a, b):
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _node(av + bv, (a, b), vjp)


def sub(a, b):
    if not _is_var(a, b):
        return np.subtract(a, b)
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return _node(av - bv, (a, b), vjp)


def mul(a, b):
    if not _is_var(a, b):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _node(av * bv, (a, b), vjp)


def div(a, b):
    if not _is_var(a, b):
        return np.divide(a, b)
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        return (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        )

    return _node(av / bv, (a, b), vjp)


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _node(-a.value, (a,), lambda g: (-g,))


def matmul(a, b):
    if not _is_var(a, b):
        return np.matmul(a, b)
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:  # dot -> scalar
            ga = g * bv
            gb = g * av
        elif bv.ndim == 1:  # (..., n, m) @ (m,) -> (..., n)
            ga = _unbroadcast(g[..., :, None] * bv, av.shape)
            gb = _unbroadcast(np.einsum("...n,...nm->...m", g, av), bv.shape)
        elif av.ndim == 1:  # (m,) @ (..., m, k) -> (..., k)
            ga = _unbroadcast(np.einsum("...k,...mk->...m", g, bv), av.shape)
            gb = _unbroadcast(av[:, None] * g[..., None, :], bv.shape)
        else:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return _node(np.matmul(av, bv), (a, b), vjp)


def dot_last(a, b):
    """Contract the last axes: sum(a * b, axis=-1) with broadcasting."""
    return sum_(mul(a, b), axis=-1)


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _node(out, (a,), vjp)


def mean_(a, axis=None, keepdims=False):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a):
    if not isinstance(a, Var):
        return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a, dtype=np.float64)))
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a):
    if not isinstance(a, Var):
        return np.logaddexp(0.0, a)
    out = np.logaddexp(0.0, a.value)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * s,))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,))


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def square(a):
    return mul(a, a)


def relu(a):
    return maximum_const(a, 0.0)


def maximum_const(a, c):
    """Elementwise max with a constant (clamp from below)."""
    if not isinstance(a, Var):
        return np.maximum(a, c)
    av = a.value
    mask = (av > c).astype(np.float64)
    return _node(np.maximum(av, c), (a,), lambda g: (g * mask,))


def softmax(a, axis=-1):
    if not isinstance(a, Var):
        av = np.asarray(a, dtype=np.float64)
        z = av - av.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)
    av = a.value
    z = av - av.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * p, axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _node(p, (a,), vjp)


def logsumexp(a, axis=-1, keepdims=False):
    if not isinstance(a, Var):
        av = np.asarray(a, dtype=np.float64)
        mx = av.max(axis=axis, keepdims=True)
        out = np.log(np.sum(np.exp(av - mx), axis=axis, keepdims=True)) + mx
        return out if keepdims else np.squeeze(out, axis=axis)
    av = a.value
    mx = av.max(axis=axis, keepdims=True)
    e = np.exp(av - mx)
    se = e.sum(axis=axis, keepdims=True)
    out = np.log(se) + mx
    w = e / se

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (gg * w,)

    return _node(out if keepdims else np.squeeze(out, axis=axis), (a,), vjp)


def concat(parts, axis=-1):
    parts = list(parts)
    if not _is_var(*parts):
        return np.concatenate(parts, axis=axis)
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(parts), vjp)


def stack(parts, axis=0):
    parts = list(parts)
    if not _is_var(*parts):
        return np.stack(parts, axis=axis)
    vals = [value_of(p) for p in parts]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _node(out, tuple(parts), vjp)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    av = a.value
    return _node(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def swap_last2(a):
    """Transpose the last two axes."""
    if not isinstance(a, Var):
        return np.swapaxes(a, -1, -2)
    return _node(
        np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def getitem(a, idx):
    if not isinstance(a, Var):
        return np.asarray(a)[idx]
    av = a.value
    out = av[idx]

    def vjp(g):
        ga = np.zeros_like(av)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), vjp)


def where_const(cond, a, b):
    """Select with a non-differentiable condition."""
    if not _is_var(a, b):
        return np.where(cond, a, b)
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), av.shape),
            _unbroadcast(np.where(cond, 0.0, g), bv.shape),
        )

    return _node(np.where(cond, av, bv), (a, b), vjp)
