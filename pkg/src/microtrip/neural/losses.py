"""Denoising and kinematic penalty terms.

Every function accepts plain arrays or :class:`Tensor` inputs and returns a
:class:`Tensor`, so the same code serves evaluation and training. Speed
arguments have time on the last axis; an optional boolean ``mask`` with the
same shape marks valid samples, and a difference term counts only when all
samples it touches are valid. Penalties are summed over time; with a
leading batch axis the per-trajectory sums are averaged over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, diff

ACCEL_CAP = 4.0
BRAKE_CAP = 5.0
JERK_CAP = 2.0
ACCEL_STD_TARGET = 0.5


def _pair_mask(mask, k):
    """Validity of order-k differences given a sample mask."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    out = m[..., k:].copy()
    for j in range(k):
        out &= m[..., j : m.shape[-1] - k + j]
    return out


def _reduce(terms: Tensor, mask):
    if mask is not None:
        terms = terms * mask.astype(np.float64)
    per_traj = terms.sum(axis=-1)
    return per_traj.mean() if per_traj.ndim else per_traj


def loss_simple(eps, eps_hat, mask=None):
    """Mean squared error between true and predicted noise (over ``mask``)."""
    r = as_tensor(eps_hat) - as_tensor(eps)
    sq = r * r
    if mask is None:
        return sq.mean()
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), sq.shape)
    return (sq * m).sum() * (1.0 / max(m.sum(), 1.0))


def loss_smooth(v, mask=None):
    """Sum of squared second differences ``(v_{t+2} - 2 v_{t+1} + v_t)^2``."""
    v = as_tensor(v)
    d2 = diff(diff(v))
    return _reduce(d2 * d2, _pair_mask(mask, 2))


def loss_accel(v, mask=None, accel_cap=ACCEL_CAP, brake_cap=BRAKE_CAP):
    """Squared excess of acceleration over +accel_cap and braking over brake_cap."""
    a = diff(as_tensor(v))
    up = (a - accel_cap).relu()
    dn = (-a - brake_cap).relu()
    return _reduce(up * up + dn * dn, _pair_mask(mask, 1))


def loss_jerk(v, mask=None, jerk_cap=JERK_CAP):
    """Squared excess of |jerk| over ``jerk_cap``."""
    j = diff(diff(as_tensor(v)))
    ex = (j.abs() - jerk_cap).relu()
    return _reduce(ex * ex, _pair_mask(mask, 2))


def accel_std(v, mask=None):
    """Population standard deviation of the acceleration (per trajectory)."""
    a = diff(as_tensor(v))
    if mask is None:
        mu = a.mean(axis=-1, keepdims=True)
        c = a - mu
        return (c * c).mean(axis=-1).sqrt()
    m = _pair_mask(mask, 1).astype(np.float64)
    n = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    mu = (a * m).sum(axis=-1, keepdims=True) / n
    c = (a - mu) * m
    return ((c * c).sum(axis=-1, keepdims=True) / n).sqrt().sum(axis=-1)


def loss_accel_dist(v, mask=None, target=ACCEL_STD_TARGET):
    """Squared gap between the acceleration std and ``target``."""
    s = accel_std(v, mask)
    g = (s - target) * (s - target)
    return g.mean() if g.ndim else g


@dataclass(frozen=True)
class PhysicsWeights:
    smooth: float = 0.1
    accel: float = 0.03
    jerk: float = 0.02
    accel_dist: float = 0.05
    accel_cap: float = ACCEL_CAP
    brake_cap: float = BRAKE_CAP
    jerk_cap: float = JERK_CAP
    accel_std_target: float = ACCEL_STD_TARGET

    def __post_init__(self):
        for name in ("smooth", "accel", "jerk", "accel_dist"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")
        for name in ("accel_cap", "brake_cap", "jerk_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def loss_csdi(eps, eps_hat, v0_hat, weights: PhysicsWeights | None = None, mse_mask=None, valid_mask=None):
    """Weighted objective ``L_MSE + w_s L_smooth + w_a L_accel + w_j L_jerk + w_d L_accel_dist``.

    ``v0_hat`` is the clean-speed estimate (m/s). Returns ``(total, parts)``
    where ``parts`` maps each unweighted component name to its Tensor.
    """
    w = weights or PhysicsWeights()
    parts = {
        "mse": loss_simple(eps, eps_hat, mse_mask),
        "smooth": loss_smooth(v0_hat, valid_mask),
        "accel": loss_accel(v0_hat, valid_mask, w.accel_cap, w.brake_cap),
        "jerk": loss_jerk(v0_hat, valid_mask, w.jerk_cap),
        "accel_dist": loss_accel_dist(v0_hat, valid_mask, w.accel_std_target),
    }
    total = (
        parts["mse"]
        + parts["smooth"] * w.smooth
        + parts["accel"] * w.accel
        + parts["jerk"] * w.jerk
        + parts["accel_dist"] * w.accel_dist
    )
    return total, parts


def weighted_parts(parts, weights: PhysicsWeights | None = None):
    w = weights or PhysicsWeights()
    out = {"mse": float(parts["mse"].data)}
    for name in ("smooth", "accel", "jerk", "accel_dist"):
        out[name] = getattr(w, name) * float(parts[name].data)
    return out


__all__ = [
    "Tensor",
    "loss_simple",
    "loss_smooth",
    "loss_accel",
    "loss_jerk",
    "loss_accel_dist",
    "accel_std",
    "loss_csdi",
    "PhysicsWeights",
    "weighted_parts",
]
