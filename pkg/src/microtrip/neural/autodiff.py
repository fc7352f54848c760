"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and records the operation that
produced it. Calling :meth:`Tensor.backward` on a scalar walks the graph in
reverse topological order and accumulates ``.grad`` on every tensor that
requires it. Broadcasting follows numpy rules; gradients are reduced back to
the operand shape.
"""
from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    @staticmethod
    def _make(data, parents, backward):
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward)
        return Tensor(data)

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # interior node, fully propagated

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(-g, b.shape))

        return Tensor._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * out / b.data, b.shape))

        return Tensor._make(out, (a, b), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        a = self

        def bw(g):
            a._accum(g * p * a.data ** (p - 1))

        return Tensor._make(a.data**p, (a,), bw)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

        return Tensor._make(a.data @ b.data, (a, b), bw)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # ----------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims=False):
        a = self
        out = a.data.max(axis=axis, keepdims=True)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            hit = a.data == out
            a._accum(hit * g / hit.sum(axis=axis, keepdims=True))

        res = out if keepdims else (out.squeeze(axis) if axis is not None else out.reshape(()))
        return Tensor._make(res, (a,), bw)

    # --------------------------------------------------------------- shaping
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        a = self
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))

    def swapaxes(self, i, j):
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(axes)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(a.data[idx], (a,), bw)

    # ------------------------------------------------------------ elementwise
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)

        def bw(g):
            # subgradient 0 at the origin keeps std-of-constant finite
            safe = np.where(out > 0, out, 1.0)
            a._accum(np.where(out > 0, g * 0.5 / safe, 0.0))

        return Tensor._make(out, (a,), bw)

    def abs(self):
        a = self
        return Tensor._make(np.abs(a.data), (a,), lambda g: a._accum(g * np.sign(a.data)))

    def relu(self):
        a = self
        return Tensor._make(np.maximum(a.data, 0.0), (a,), lambda g: a._accum(g * (a.data > 0)))

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * (1.0 - out * out)))

    def sigmoid(self):
        a = self
        out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor._make(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))

    def silu(self):
        a = self
        sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        out = a.data * sig

        def bw(g):
            a._accum(g * (sig + a.data * sig * (1.0 - sig)))

        return Tensor._make(out, (a,), bw)

    def softmax(self, axis=-1):
        a = self
        z = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

        return Tensor._make(out, (a,), bw)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(part)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def where(cond, a, b) -> Tensor:
    """Elementwise select with a constant boolean ``cond``."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        a._accum(_unbroadcast(np.where(cond, g, 0.0), a.shape))
        b._accum(_unbroadcast(np.where(cond, 0.0, g), b.shape))

    return Tensor._make(np.where(cond, a.data, b.data), (a, b), bw)


def diff(x: Tensor, axis=-1) -> Tensor:
    """First difference ``x[i+1] - x[i]`` along ``axis``."""
    n = x.shape[axis]
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    return x[tuple(hi)] - x[tuple(lo)]


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` (B, Cin, L) with ``w`` (Cout, Cin, K)."""
    x, w = as_tensor(x), as_tensor(w)
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    Lp = xp.shape[-1]
    Lout = (Lp - K) // stride + 1
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(B, Cin, K, Lout), strides=(s0, s1, s2, s2 * stride), writeable=False
    )
    cols2 = cols.reshape(B, Cin * K, Lout)
    wm = w.data.reshape(Cout, Cin * K)
    out = np.einsum("ok,bkl->bol", wm, cols2, optimize=True)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]

    def bw(g):
        if w.requires_grad:
            gw = np.einsum("bol,bkl->ok", g, cols2, optimize=True)
            w._accum(gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.einsum("ok,bol->bkl", wm, g, optimize=True).reshape(B, Cin, K, Lout)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, :, k : k + stride * (Lout - 1) + 1 : stride] += gcols[:, :, k, :]
            x._accum(gxp[:, :, padding : padding + L] if padding else gxp)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, bw)


def repeat_interleave(x: Tensor, r: int, axis=-1) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    a = x

    def bw(g):
        shp = list(g.shape)
        ax = axis % g.ndim
        shp[ax] //= r
        shp.insert(ax + 1, r)
        a._accum(g.reshape(shp).sum(axis=ax + 1))

    return Tensor._make(np.repeat(a.data, r, axis=axis), (a,), bw)
