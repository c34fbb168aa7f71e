"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its inputs and a closure computing input gradients
from the output gradient; ``backward`` walks the graph once in reverse
topological order. Broadcasting follows numpy rules, with gradients summed
back onto the original shapes.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def _accumulate(self, g):
        if self.grad is None:
            # own copy: g may alias another node's gradient buffer
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, seed=None):
        """Accumulate gradients of this (typically scalar) node into leaves."""
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.value)
        self._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def swap_last(self):
        return swap_last(self)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(value, parents, backward):
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value + b.value

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.value.shape))

    return _make(out_val, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value - b.value

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.value.shape))

    return _make(out_val, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value * b.value

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _make(out_val, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value / b.value

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(out_val, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    # N-D stack times a plain matrix: one flattened GEMM beats numpy's loop
    # of tiny per-batch GEMMs, in both directions
    if b.value.ndim == 2 and a.value.ndim > 2:
        lead = a.value.shape[:-1]
        k_in, k_out = b.value.shape
        a2 = np.ascontiguousarray(a.value.reshape(-1, k_in))
        out_val = (a2 @ b.value).reshape(lead + (k_out,))

        def backward(g):
            g2 = np.ascontiguousarray(g.reshape(-1, k_out))
            if a.requires_grad:
                a._accumulate((g2 @ b.value.T).reshape(a.value.shape))
            if b.requires_grad:
                b._accumulate(a2.T @ g2)

        return _make(out_val, (a, b), backward)

    out_val = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.value.swapaxes(-1, -2), a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.value.swapaxes(-1, -2) @ g, b.value.shape))

    return _make(out_val, (a, b), backward)


def swap_last(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.swapaxes(-1, -2))

    return _make(a.value.swapaxes(-1, -2), (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.reshape(a.value.shape))

    return _make(a.value.reshape(shape), (a,), backward)


def permute(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _make(a.value.transpose(axes), (a,), backward)


def take(a, key):
    """Basic slicing / integer-array indexing with scatter-add backward."""
    a = as_tensor(a)

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, key, g)
        a._accumulate(ga)

    return _make(a.value[key], (a,), backward)


def gather_rows(a, idx):
    """Rows of a 2-D table by integer index array; output idx.shape + (k,)."""
    a = as_tensor(a)
    idx = np.asarray(idx)

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx.reshape(-1), g.reshape(-1, a.value.shape[-1]))
        a._accumulate(ga)

    return _make(a.value[idx], (a,), backward)


def scatter_rows(base: np.ndarray, idx, rows):
    """Constant 2-D table with rows at the (unique) indices replaced by live
    rows; gradient flows only into the replacement rows."""
    rows = as_tensor(rows)
    idx = np.asarray(idx)
    value = np.array(base, dtype=np.float64, copy=True)
    value[idx] = rows.value

    def backward(g):
        rows._accumulate(g[idx])

    return _make(value, (rows,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    out_val = np.concatenate([t.value for t in tensors], axis=axis)

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(idx)])
            offset += n

    return _make(out_val, tuple(tensors), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.value.shape).copy())

    return _make(out_val, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    out_val = a.value.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.value.shape) / n)

    return _make(out_val, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.value)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return _make(t, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.value))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _make(s, (a,), backward)


def relu(a):
    a = as_tensor(a)
    out_val = np.maximum(a.value, 0.0)

    def backward(g):
        a._accumulate(g * (a.value > 0.0))

    return _make(out_val, (a,), backward)


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.value)

    def backward(g):
        a._accumulate(g * e)

    return _make(e, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.value)

    return _make(np.log(a.value), (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    r = np.sqrt(a.value)

    def backward(g):
        a._accumulate(g / (2.0 * r))

    return _make(r, (a,), backward)


def masked_softmax(logits, mask):
    """Softmax over the last axis with an additive {0, -inf} mask.

    Rows must keep at least one unmasked entry; masked entries come out as
    exactly zero and receive no gradient.
    """
    logits = as_tensor(logits)
    z = logits.value + mask
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        logits._accumulate(p * (g - dot))

    return _make(p, (logits,), backward)


def softmax(logits):
    return masked_softmax(logits, 0.0)


def log_softmax(logits):
    logits = as_tensor(logits)
    m = np.max(logits.value, axis=-1, keepdims=True)
    z = logits.value - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out_val = z - lse
    p = np.exp(out_val)

    def backward(g):
        logits._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    return _make(out_val, (logits,), backward)


def dropout(a, rate: float, rng: np.random.Generator):
    """Inverted dropout; identity when rate is 0."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.value.shape) < keep) / keep

    def backward(g):
        a._accumulate(g * mask)

    return _make(a.value * mask, (a,), backward)


def layer_norm(x, scale, bias, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=-1, keepdims=True)
    xn = div(xc, sqrt(add(var, eps)))
    return add(mul(xn, scale), bias)
