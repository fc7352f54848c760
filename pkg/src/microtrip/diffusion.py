"""DDPM machinery independent of the network.

Arrays are indexed by diffusion step ``t = 0 .. T``: ``alpha_bar[0] = 1`` and
``beta[0] = 0`` are placeholders for the clean data so ``t`` can be used
directly as an index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import WINDOW, PaddedWindow, accel_channel

SPEED_SCALE = 30.0  # network state is speed / SPEED_SCALE (m/s)
X0_CLIP = 2.0  # clean-state clamp used while sampling (60 m/s)
DURATION_SCALE = 1000.0
VMAX_SCALE = 40.0
ACCEL_REF = 4.0


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    kind: str

    @classmethod
    def from_betas(cls, betas, kind):
        betas = np.asarray(betas, dtype=np.float64)
        T = betas.size
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        sigma = np.zeros(T + 1)
        sigma[1:] = np.sqrt((1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:])
        return cls(T, beta, alpha, alpha_bar, sigma, kind)

    def to_dict(self):
        return {"kind": self.kind, "T": self.T}


def linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    if T < 2:
        raise ValueError("need at least 2 diffusion steps")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T), "linear")


def cosine_schedule(T=1000, s=0.008, max_beta=0.999) -> NoiseSchedule:
    """Cosine schedule; betas derived from consecutive alpha-bar ratios, clipped."""
    if T < 2:
        raise ValueError("need at least 2 diffusion steps")
    t = np.arange(T + 1)
    f = np.cos(((t / T + s) / (1 + s)) * math.pi / 2) ** 2
    ab = f / f[0]
    betas = np.minimum(1.0 - ab[1:] / ab[:-1], max_beta)
    return NoiseSchedule.from_betas(betas, "cosine")


def make_schedule(kind, T):
    if kind == "linear":
        return linear_schedule(T)
    if kind == "cosine":
        return cosine_schedule(T)
    raise ValueError(f"unknown schedule kind {kind!r}")


def _coef(arr, t, ndim):
    c = np.asarray(arr[np.asarray(t)], dtype=np.float64)
    return c.reshape(c.shape + (1,) * (ndim - c.ndim)) if c.ndim else c


def _check_t(t, sched, lo=0):
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > sched.T):
        raise ValueError(f"diffusion step out of range [{lo}, {sched.T}]")


def forward_sample(x0, t, eps, sched: NoiseSchedule):
    """Closed-form corruption ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` is a scalar or one step per leading batch entry.
    """
    _check_t(t, sched)
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    ab = _coef(sched.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t, t, eps_hat, sched: NoiseSchedule):
    """Invert the corruption given a noise estimate."""
    _check_t(t, sched, lo=1)
    ab = _coef(sched.alpha_bar, t, np.ndim(x_t))
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def reverse_step(x_t, t, eps_hat, sched: NoiseSchedule, z=None, stochastic=True):
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t = 1``."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1):
        raise ValueError("reverse_step needs t >= 1")
    _check_t(t, sched, lo=1)
    nd = np.ndim(x_t)
    a = _coef(sched.alpha, t, nd)
    ab = _coef(sched.alpha_bar, t, nd)
    mean = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if not stochastic or z is None:
        return mean
    sig = _coef(sched.sigma, t, nd) * (t_arr.reshape(t_arr.shape + (1,) * (nd - t_arr.ndim)) > 1)
    return mean + sig * z


def apply_inpainting(x, mask, known):
    """Overwrite masked entries: ``x * (1 - M) + known * M``."""
    m = np.asarray(mask, dtype=np.float64)
    return np.asarray(x) * (1.0 - m) + np.asarray(known) * m


def cfg_blend(eps_cond, eps_uncond, w):
    """Guided noise ``(1 + w) eps_cond - w eps_uncond``."""
    if w == 0:
        return np.asarray(eps_cond)
    return (1.0 + w) * np.asarray(eps_cond) - w * np.asarray(eps_uncond)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 0.0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("guidance scale must be non-negative")


# ------------------------------------------------------------------ conditions


def vehicle_dynamics(v) -> float:
    """Vehicle-dynamics scalar in [0, 1]: 95th percentile of positive accelerations / 4 m/s^2."""
    a = np.diff(np.asarray(v, dtype=np.float64))
    pos = a[a > 0]
    if not pos.size:
        return 0.0
    return float(np.clip(np.percentile(pos, 95) / ACCEL_REF, 0.0, 1.0))


@dataclass(frozen=True)
class ConditionVector:
    values: np.ndarray
    mode: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        want = {"unet": 2, "csdi": 4}.get(self.mode)
        if want is None:
            raise ValueError(f"unknown condition mode {self.mode!r}")
        if vals.shape != (want,):
            raise ValueError(f"{self.mode} conditions need {want} entries, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite condition entry")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_stats(cls, avg_speed, duration, mode, max_speed=None, d_veh=None):
        if mode == "unet":
            return cls(np.array([avg_speed / SPEED_SCALE, duration / DURATION_SCALE]), mode)
        return cls(
            np.array([avg_speed / SPEED_SCALE, duration / DURATION_SCALE, max_speed / VMAX_SCALE, d_veh]), mode
        )

    @classmethod
    def from_trip(cls, trip, mode):
        s = trip.stats
        return cls.from_stats(s.avg_speed_mps, s.duration_s, mode, s.max_speed_mps, vehicle_dynamics(trip.speeds))

    @property
    def avg_speed(self):
        return float(self.values[0] * SPEED_SCALE)

    @property
    def duration(self):
        return int(round(self.values[1] * DURATION_SCALE))

    @property
    def d_veh(self):
        return float(self.values[3]) if self.mode == "csdi" else None


# ------------------------------------------------------------------ windows


def trip_to_state(trip, channels, length=WINDOW):
    """Normalised network state for one trip: (channels, length) plus n_valid."""
    v = trip.speeds if hasattr(trip, "speeds") else np.asarray(trip, dtype=np.float64)
    n = min(v.size, length)
    x = np.zeros((channels, length))
    x[0, :n] = v[:n] / SPEED_SCALE
    if channels == 2:
        x[1] = accel_channel(x[0], n)
    return x, n


def constraint_mask(n_valid, channels, length=WINDOW):
    """Positions held at zero during sampling: pad region on every channel plus
    the first and last valid speed samples."""
    n_valid = np.atleast_1d(np.asarray(n_valid, dtype=int))
    idx = np.arange(length)
    pad = idx[None, :] >= n_valid[:, None]
    m = np.repeat(pad[:, None, :], channels, axis=1)
    m[:, 0, 0] = True
    m[np.arange(n_valid.size), 0, np.minimum(n_valid, length) - 1] = True
    return m


def sample_loop(
    denoiser,
    cond,
    sched: NoiseSchedule,
    n_valid,
    rngs,
    channels=1,
    length=WINDOW,
    guidance: GuidanceConfig | None = None,
    callback=None,
    x0_clip=X0_CLIP,
):
    """Ancestral sampling with hard zero constraints re-imposed after every step.

    ``denoiser(x, t, cond, drop)`` returns a noise estimate shaped like ``x``.
    ``rngs`` holds one generator per sample so results do not depend on batch
    composition. Returns the (B, channels, length) normalised state.

    With ``x0_clip`` set, the clean state implied by each noise estimate is
    clamped to ``[-x0_clip, x0_clip]`` and the estimate re-derived from it.
    An accurate denoiser never triggers the clamp; a poor one can no longer
    blow up through the ``1 / sqrt(alpha_t)`` factor of late steps.
    """
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    B = cond.shape[0]
    if len(rngs) != B:
        raise ValueError("need one RNG stream per sample")
    w = (guidance or GuidanceConfig()).scale
    M = constraint_mask(np.broadcast_to(n_valid, (B,)), channels, length)
    known = np.zeros((B, channels, length))
    x = np.stack([r.standard_normal((channels, length)) for r in rngs])
    x = apply_inpainting(x, M, known)
    for t in range(sched.T, 0, -1):
        tt = np.full(B, t)
        if w > 0:
            both = denoiser(
                np.concatenate([x, x]),
                np.concatenate([tt, tt]),
                np.concatenate([cond, cond]),
                np.concatenate([np.zeros(B, bool), np.ones(B, bool)]),
            )
            eps = cfg_blend(both[:B], both[B:], w)
        else:
            eps = denoiser(x, tt, cond, np.zeros(B, bool))
        if x0_clip:
            ab = sched.alpha_bar[t]
            x0 = np.clip((x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab), -x0_clip, x0_clip)
            eps = (x - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        z = np.stack([r.standard_normal((channels, length)) for r in rngs]) if t > 1 else None
        x = reverse_step(x, tt, eps, sched, z=z, stochastic=t > 1)
        x = apply_inpainting(x, M, known)
        if not np.all(np.isfinite(x)):
            bad = np.unique(np.argwhere(~np.isfinite(x))[:, 0])
            raise NumericalError(f"non-finite state at step {t} for samples {bad[:10].tolist()}")
        if callback is not None:
            callback(t - 1, x)
    return x


def state_to_window(x, n_valid) -> PaddedWindow:
    """Wrap one normalised state as a physical-unit PaddedWindow."""
    vals = np.array(x, dtype=np.float64) * SPEED_SCALE
    length = vals.shape[-1]
    mask = np.arange(length) < n_valid
    if vals.shape[0] == 2:
        vals[1] = accel_channel(vals[0], n_valid)
    return PaddedWindow(vals, mask)


def n_valid_for(duration, length=WINDOW):
    return int(min(duration + 1, length))
