"""Building blocks for the denoisers: linear/conv layers, norms, attention, FiLM."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, as_tensor, concat, conv1d, parameter


class Module:
    """Parameter container; children are discovered through attributes."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = parameter(_uniform(rng, d_in, (d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = as_tensor(x) @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None):
        self.weight = parameter(_uniform(rng, c_in * k, (c_out, c_in, k)))
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gain + shift


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = parameter(np.ones(d))
        self.shift = parameter(np.zeros(d))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift)


class GroupNorm(Module):
    """Group normalization over (B, C, L) feature maps."""

    def __init__(self, groups, channels, eps=1e-5):
        if channels % groups:
            raise ValueError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.eps = eps
        self.gain = parameter(np.ones(channels))
        self.shift = parameter(np.zeros(channels))

    def __call__(self, x):
        B, C, L = x.shape
        g = x.reshape(B, self.groups, (C // self.groups) * L)
        mu = g.mean(axis=-1, keepdims=True)
        gc = g - mu
        var = (gc * gc).mean(axis=-1, keepdims=True)
        y = (gc / (var + self.eps).sqrt()).reshape(B, C, L)
        return y * self.gain.reshape(1, C, 1) + self.shift.reshape(1, C, 1)


def film_modulate(h, gamma, beta):
    """Feature-wise affine modulation ``gamma * h + beta``.

    ``h`` is (B, C, L) or (B, L, C); ``gamma``/``beta`` are (B, C) and are
    broadcast along the sequence axis.
    """
    h = as_tensor(h)
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    C = gamma.shape[-1]
    if h.ndim == 3 and h.shape[1] == C:
        gamma = gamma.reshape(gamma.shape[0], C, 1)
        beta = beta.reshape(beta.shape[0], C, 1)
    elif h.ndim == 3 and h.shape[2] == C:
        gamma = gamma.reshape(gamma.shape[0], 1, C)
        beta = beta.reshape(beta.shape[0], 1, C)
    elif h.shape[-1] != C:
        raise ValueError(f"FiLM width {C} does not match features {h.shape}")
    return gamma * h + beta


class FiLM(Module):
    """Learned projections of an embedding to per-channel scale and shift.

    The scale is parameterised as ``1 + W e`` so a zero-initialised
    projection starts at the identity.
    """

    def __init__(self, d_emb, channels, rng):
        self.scale = Linear(d_emb, channels, rng)
        self.shift = Linear(d_emb, channels, rng)

    def __call__(self, h, emb):
        return film_modulate(h, self.scale(emb) + 1.0, self.shift(emb))


def sinusoidal_embed(t, d):
    """Sinusoidal step encoding; even entries are sines, odd entries cosines.

    Entry ``i`` uses the frequency ``10000 ** (-i / d)``. ``t`` may be a scalar
    or a 1-D array of steps; the result has a trailing axis of size ``d``.
    """
    if d % 2:
        raise ValueError("embedding dimension must be even")
    t = np.asarray(t, dtype=np.float64)
    i = np.arange(d)
    ang = t[..., None] / (10000.0 ** (i / d))
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


def attention_weights(q, k, mask=None):
    """Scaled dot-product weights softmax(q k^T / sqrt(d)) over the key axis."""
    d = q.shape[-1]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        scores = scores + np.where(mask, 0.0, -1e9)
    return scores.softmax(axis=-1)


class MultiHeadAttention(Module):
    def __init__(self, d_model, n_heads, rng, d_kv=None):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        d_kv = d_model if d_kv is None else d_kv
        self.n_heads = n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_kv, d_model, rng)
        self.v = Linear(d_kv, d_model, rng)
        self.o = Linear(d_model, d_model, rng)
        self._last_weights = None

    def _split(self, x):
        B, L, D = x.shape
        return x.reshape(B, L, self.n_heads, D // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x, context=None, keep_weights=False):
        context = x if context is None else context
        B, L, D = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        w = attention_weights(q, k)
        if keep_weights:
            self._last_weights = w.data
        out = (w @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
        return self.o(out)


class SeqAttention(Module):
    """Self-attention over a (B, C, L) feature map with a residual path."""

    def __init__(self, channels, n_heads, rng, groups):
        self.norm = GroupNorm(groups, channels)
        self.attn = MultiHeadAttention(channels, n_heads, rng)

    def __call__(self, x):
        h = self.norm(x).transpose(0, 2, 1)
        return x + self.attn(h).transpose(0, 2, 1)


__all__ = [
    "Module",
    "Linear",
    "Conv1d",
    "LayerNorm",
    "GroupNorm",
    "FiLM",
    "film_modulate",
    "sinusoidal_embed",
    "attention_weights",
    "MultiHeadAttention",
    "SeqAttention",
    "layer_norm",
    "concat",
]
