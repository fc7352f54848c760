"""Desk-scale noise predictors: a 1D U-Net with FiLM and a transformer encoder.

Both follow the same calling convention::

    eps_hat = model(x_t, t, cond, drop)

with ``x_t`` shaped (B, C, L), integer steps ``t`` shaped (B,), conditions
``cond`` shaped (B, cond_dim) and an optional boolean ``drop`` (B,) marking
samples whose condition is replaced by the learned null encoding.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, concat, no_grad, parameter, repeat_interleave, where
from .layers import (
    Conv1d,
    FiLM,
    GroupNorm,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    SeqAttention,
    sinusoidal_embed,
)


@dataclass
class UNetConfig:
    length: int = 512
    in_channels: int = 2
    cond_dim: int = 2
    widths: tuple = (16, 32, 64, 128)
    n_res: int = 1
    attn_levels: tuple = (1, 2)
    groups: int = 4
    heads: int = 2
    emb_dim: int = 32
    variant: str = field(default="unet", init=False)

    @classmethod
    def full_scale(cls):
        return cls(widths=(64, 128, 256, 512), n_res=2, groups=8, heads=4, emb_dim=256)


@dataclass
class TransformerConfig:
    length: int = 512
    in_channels: int = 1
    cond_dim: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    variant: str = field(default="transformer", init=False)

    @classmethod
    def full_scale(cls):
        return cls(d_model=256, n_heads=8, n_layers=6, d_ff=1024)


def _drop_mask(drop, batch):
    if drop is None:
        return np.zeros(batch, dtype=bool)
    drop = np.asarray(drop, dtype=bool)
    return np.broadcast_to(drop, (batch,)) if drop.ndim == 0 else drop


class _Denoiser(Module):
    config = None

    def predict(self, x, t, cond, drop=None):
        """Inference-only forward returning a plain ndarray."""
        with no_grad():
            return self(x, t, cond, drop).data

    def descriptor(self):
        d = asdict(self.config)
        d["num_parameters"] = self.num_parameters()
        return d

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class _CondEmbed(Module):
    def __init__(self, cond_dim, d, rng):
        self.l1 = Linear(cond_dim, d, rng)
        self.l2 = Linear(d, d, rng)
        self.null = parameter(rng.normal(0.0, 0.02, size=d))

    def __call__(self, cond, drop):
        e = self.l2(self.l1(as_tensor(cond)).silu())
        return where(drop[:, None], self.null.reshape(1, -1), e)


class _TimeEmbed(Module):
    def __init__(self, d, rng):
        self.d = d
        self.l1 = Linear(d, d, rng)
        self.l2 = Linear(d, d, rng)

    def __call__(self, t):
        return self.l2(self.l1(Tensor(sinusoidal_embed(t, self.d))).silu())


class ResBlock(Module):
    def __init__(self, c_in, c_out, d_emb, groups, rng):
        self.n1 = GroupNorm(min(groups, c_in), c_in)
        self.c1 = Conv1d(c_in, c_out, 3, rng)
        self.film = FiLM(d_emb, c_out, rng)
        self.n2 = GroupNorm(min(groups, c_out), c_out)
        self.c2 = Conv1d(c_out, c_out, 3, rng)
        self.skip = Conv1d(c_in, c_out, 1, rng) if c_in != c_out else None

    def __call__(self, x, emb):
        h = self.c1(self.n1(x).silu())
        h = self.film(h, emb)
        h = self.c2(self.n2(h).silu())
        return (self.skip(x) if self.skip is not None else x) + h


class UNet1D(_Denoiser):
    """Encoder/decoder over (B, 2, L) speed-acceleration windows.

    Each encoder level halves the length with a stride-2 convolution and
    applies FiLM-conditioned residual blocks; self-attention runs at the
    levels listed in ``attn_levels`` (levels 1 and 2 are the 128 and 64
    resolutions for a 512 window). The decoder mirrors the encoder with
    skip connections and nearest-neighbour upsampling.
    """

    def __init__(self, config: UNetConfig | None = None, seed=0):
        self.config = config or UNetConfig()
        c = self.config
        if c.length % (2 ** len(c.widths)):
            raise ValueError("length must be divisible by 2**levels")
        rng = np.random.default_rng(seed)
        d = c.emb_dim
        self.time = _TimeEmbed(d, rng)
        self.cond = _CondEmbed(c.cond_dim, d, rng)
        w0 = c.widths[0]
        self.stem = Conv1d(c.in_channels, w0, 3, rng)
        self.down, self.down_res, self.down_attn = [], [], []
        prev = w0
        for lvl, w in enumerate(c.widths):
            self.down.append(Conv1d(prev, w, 3, rng, stride=2, padding=1))
            self.down_res.append([ResBlock(w, w, d, c.groups, rng) for _ in range(c.n_res)])
            self.down_attn.append(SeqAttention(w, c.heads, rng, min(c.groups, w)) if lvl in c.attn_levels else None)
            prev = w
        # lists of lists are flattened for parameter discovery
        self.down_blocks = [b for blocks in self.down_res for b in blocks]
        self.down_attn_mods = [a for a in self.down_attn if a is not None]
        self.mid = ResBlock(prev, prev, d, c.groups, rng)
        self.up_res, self.up_attn, self.up_conv = [], [], []
        for lvl in reversed(range(len(c.widths))):
            w = c.widths[lvl]
            target = c.widths[lvl - 1] if lvl > 0 else w0
            self.up_res.append(ResBlock(2 * w, w, d, c.groups, rng))
            self.up_attn.append(SeqAttention(w, c.heads, rng, min(c.groups, w)) if lvl in c.attn_levels else None)
            self.up_conv.append(Conv1d(w, target, 3, rng))
        self.up_attn_mods = [a for a in self.up_attn if a is not None]
        self.out_norm = GroupNorm(min(c.groups, 2 * w0), 2 * w0)
        self.out = Conv1d(2 * w0, c.in_channels, 3, rng)

    def named_parameters(self, prefix=""):
        hidden = {"down_res", "down_attn", "up_attn"}
        for key, val in vars(self).items():
            if key in hidden or key.startswith("_") or key == "config":
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def __call__(self, x, t, cond, drop=None):
        x = as_tensor(x)
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        emb = (self.time(t) + self.cond(np.asarray(cond, dtype=np.float64), _drop_mask(drop, B))).silu()
        h0 = self.stem(x)
        h = h0
        skips = []
        for conv, blocks, attn in zip(self.down, self.down_res, self.down_attn):
            h = conv(h)
            for blk in blocks:
                h = blk(h, emb)
            if attn is not None:
                h = attn(h)
            skips.append(h)
        h = self.mid(h, emb)
        for blk, attn, conv in zip(self.up_res, self.up_attn, self.up_conv):
            h = blk(concat([h, skips.pop()], axis=1), emb)
            if attn is not None:
                h = attn(h)
            h = conv(repeat_interleave(h, 2, axis=-1))
        h = concat([h, h0], axis=1)
        return self.out(self.out_norm(h).silu())


class EncoderLayer(Module):
    def __init__(self, d, heads, d_ff, rng):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, d_ff, rng)
        self.ff2 = Linear(d_ff, d, rng)
        self.norm3 = LayerNorm(d)

    def __call__(self, h, cond_tokens, keep_weights=False):
        h = self.norm1(h + self.self_attn(h, keep_weights=keep_weights))
        h = self.norm2(h + self.cross_attn(h, cond_tokens))
        return self.norm3(h + self.ff2(self.ff1(h).silu()))


class TransformerDenoiser(_Denoiser):
    """Transformer encoder over univariate (B, 1, L) speed windows.

    Each position is projected to ``d_model`` and summed with a learned
    positional table and the broadcast step embedding. Every condition scalar
    becomes one key/value token (value times a learned direction plus a
    learned type vector) that the sequence reads through cross-attention.
    """

    def __init__(self, config: TransformerConfig | None = None, seed=0):
        self.config = config or TransformerConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        d = c.d_model
        self.inp = Linear(c.in_channels, d, rng)
        self.pos = parameter(rng.normal(0.0, 0.02, size=(c.length, d)))
        self.time = _TimeEmbed(d, rng)
        self.cond_dir = parameter(rng.normal(0.0, 1.0, size=(c.cond_dim, d)))
        self.cond_type = parameter(rng.normal(0.0, 0.02, size=(c.cond_dim, d)))
        self.null_tokens = parameter(rng.normal(0.0, 0.02, size=(c.cond_dim, d)))
        self.layers = [EncoderLayer(d, c.n_heads, c.d_ff, rng) for _ in range(c.n_layers)]
        self.out = Linear(d, c.in_channels, rng)

    def cond_tokens(self, cond, drop):
        cond = np.asarray(cond, dtype=np.float64)
        tok = Tensor(cond[:, :, None]) * self.cond_dir + self.cond_type
        return where(drop[:, None, None], self.null_tokens.reshape(1, *self.null_tokens.shape), tok)

    def __call__(self, x, t, cond, drop=None, keep_weights=False):
        x = as_tensor(x)
        B, C, L = x.shape
        t = np.broadcast_to(np.asarray(t), (B,))
        h = self.inp(x.transpose(0, 2, 1)) + self.pos[:L]
        h = h + self.time(t).reshape(B, 1, -1)
        tokens = self.cond_tokens(cond, _drop_mask(drop, B))
        for layer in self.layers:
            h = layer(h, tokens, keep_weights=keep_weights)
        return self.out(h).transpose(0, 2, 1)


def build_model(descriptor: dict, seed=0):
    """Instantiate a denoiser from an architecture descriptor."""
    d = {k: v for k, v in descriptor.items() if k not in ("variant", "num_parameters")}
    variant = descriptor.get("variant")
    if variant == "unet":
        for key in ("widths", "attn_levels"):
            if key in d:
                d[key] = tuple(d[key])
        return UNet1D(UNetConfig(**d), seed=seed)
    if variant == "transformer":
        return TransformerDenoiser(TransformerConfig(**d), seed=seed)
    raise ValueError(f"unknown architecture variant {variant!r}")
