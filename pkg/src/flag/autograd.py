"""A small reverse-mode differentiation engine over numpy arrays.

Only the handful of operations needed for attention-based message passing
are provided.  Each op records its parents and a closure that pushes the
output gradient back onto them; :func:`backprop` walks the recorded graph in
reverse topological order.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _result(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), backward)


def matmul(a, b):
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _result(out, (a, b), backward)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(out, (a,), backward)


def index(a, idx):
    """Basic or integer-array indexing along the leading axis."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _result(out, (a,), backward)


def gather_rows(a, rows):
    """``a[rows]`` for an integer index vector (rows may repeat)."""
    rows = np.asarray(rows)
    out = a.data[rows]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, rows, g)
        _accumulate(a, full)

    return _result(out, (a,), backward)


def scatter_sum(a, rows, n):
    """Sum rows of ``a`` into ``n`` buckets: ``out[rows[e]] += a[e]``."""
    rows = np.asarray(rows)
    out = np.zeros((n,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, rows, a.data)

    def backward(g):
        _accumulate(a, g[rows])

    return _result(out, (a,), backward)


def segment_softmax(scores, seg, n):
    """Softmax of ``scores`` (E, ...) within groups of equal ``seg`` id.

    Every group id in ``0..n-1`` that appears must have at least one member;
    empty groups are simply absent from the output.
    """
    seg = np.asarray(seg)
    s = scores.data
    peak = np.full((n,) + s.shape[1:], -np.inf, dtype=s.dtype)
    np.maximum.at(peak, seg, s)
    ex = np.exp(s - peak[seg])
    den = np.zeros_like(peak)
    np.add.at(den, seg, ex)
    alpha = ex / den[seg]

    def backward(g):
        t = alpha * g
        tot = np.zeros_like(peak)
        np.add.at(tot, seg, t)
        _accumulate(scores, t - alpha * tot[seg])

    return _result(alpha, (scores,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                _accumulate(t, part)

    return _result(out, tuple(tensors), backward)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(out, (a,), backward)


def elu(a, alpha=1.0):
    x = a.data
    neg = x < 0
    out = np.where(neg, alpha * np.expm1(np.minimum(x, 0)), x)

    def backward(g):
        _accumulate(a, g * np.where(neg, out + alpha, 1.0))

    return _result(out, (a,), backward)


def leaky_relu(a, slope=0.2):
    x = a.data
    pos = x > 0
    out = np.where(pos, x, slope * x)

    def backward(g):
        _accumulate(a, g * np.where(pos, 1.0, slope).astype(x.dtype))

    return _result(out, (a,), backward)


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _result(out, (a,), backward)


def log(a):
    out = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _result(out, (a,), backward)


def log_softmax(a):
    """Log-softmax over the last axis, computed via log-sum-exp."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        p = np.exp(out)
        _accumulate(a, g - p * g.sum(axis=-1, keepdims=True))

    return _result(out, (a,), backward)


def backprop(root, seed=None):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable tensor."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    if seed is None:
        seed = np.ones_like(root.data)
    root.grad = np.asarray(seed, dtype=root.data.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # free the graph; leaves keep their .grad
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
