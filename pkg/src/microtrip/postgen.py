"""Generation-side condition sampling, post-processing and the diffusion driver."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import WINDOW, MicroTrip, accel_channel, validate_micro_trip
from .diffusion import (
    ConditionVector,
    GuidanceConfig,
    NoiseSchedule,
    sample_loop,
    state_to_window,
    vehicle_dynamics,
    n_valid_for,
)
from .markov import trip_rng

WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class GenerationConfig:
    """Condition-boost exponents and post-processing constants.

    ``boost_speed = boost_duration = 0`` samples the condition pool
    uniformly. Kernel sizes must be odd.
    """

    boost_speed: float = 0.0
    boost_duration: float = 0.0
    smooth_sigma: float = 1.5
    smooth_kernel: int = 7
    ramp_threshold: float = 0.5
    ramp_seconds: int = 3
    heavy_vehicle_cutoff: float = 0.4
    heavy_kernel: int = 9
    corr_sigma: float = 0.0
    corr_length: float = 10.0
    rescale_to_target: bool = True
    guidance_scale: float = 0.0
    x0_clip: float = 2.0
    batch_size: int = 64

    def __post_init__(self):
        for name in ("boost_speed", "boost_duration"):
            if not 0.0 <= getattr(self, name) <= 2.0:
                raise ValueError(f"{name} must lie in [0, 2]")
        for name in ("smooth_kernel", "heavy_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer")
        for name in ("smooth_sigma", "corr_sigma", "corr_length", "ramp_threshold", "guidance_scale", "x0_clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.ramp_seconds < 1 or self.batch_size < 1:
            raise ValueError("ramp_seconds and batch_size must be positive")

    @classmethod
    def for_engine(cls, engine, **overrides):
        """Defaults per engine: the U-Net boosts speed and uses guidance 3."""
        base = {"unet": {"boost_speed": 1.75, "guidance_scale": 3.0}, "csdi": {}}.get(engine, {})
        return cls(**{**base, **overrides})

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ conditions


def _stats_of(item):
    return item.stats if isinstance(item, MicroTrip) else item


def boost_weights(pool, beta_s, beta_d):
    """Normalised probabilities ``speed^beta_s * duration^beta_d``."""
    stats = [_stats_of(p) for p in pool]
    if not stats:
        raise ValueError("empty condition pool")
    s = np.array([st.avg_speed_mps for st in stats], dtype=np.float64)
    d = np.array([st.duration_s for st in stats], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(s > 0, s, 0.0) ** beta_s * np.where(d > 0, d, 0.0) ** beta_d
    w = np.where(np.isfinite(w) & (w > 0), w, WEIGHT_FLOOR)
    return w / w.sum()


def sample_conditions(pool, beta_s, beta_d, n, rng, mode="csdi", d_veh=None):
    """Draw ``n`` conditions with replacement from ``pool``.

    Pool entries are MicroTrips or TripStats. In csdi mode the vehicle scalar
    comes from the trip itself or, for bare TripStats, from ``d_veh``.
    Returns ``(conditions, indices)``.
    """
    pool = list(pool)
    p = boost_weights(pool, beta_s, beta_d)
    idx = rng.choice(len(pool), size=n, replace=True, p=p)
    out = []
    for i in idx:
        item = pool[i]
        st = _stats_of(item)
        dv = None
        if mode == "csdi":
            if isinstance(item, MicroTrip):
                dv = vehicle_dynamics(item.speeds)
            elif d_veh is not None:
                dv = float(d_veh[i])
            else:
                raise ValueError("csdi conditions need d_veh for TripStats entries")
        out.append(ConditionVector.from_stats(st.avg_speed_mps, st.duration_s, mode, st.max_speed_mps, dv))
    return out, idx


# ------------------------------------------------------------------ transforms


def gaussian_kernel(sigma, k):
    if k < 1 or k % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer")
    half = k // 2
    if sigma == 0:
        w = np.zeros(k)
        w[half] = 1.0
        return w
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(v, sigma=1.5, k=7):
    """Convolve with a normalised ``k``-tap Gaussian, mirroring at the edges."""
    v = np.asarray(v, dtype=np.float64)
    w = gaussian_kernel(sigma, k)
    half = k // 2
    if v.size < 2 or half == 0:
        return v.copy()
    padded = np.pad(v, half, mode="reflect")
    return np.convolve(padded, w, mode="valid")


def boundary_ramp(v, threshold=0.5, ramp_s=3):
    """Ramp a non-resting endpoint linearly to zero over ``ramp_s`` seconds.

    An endpoint at or below ``threshold`` is only pinned to 0. Inputs with
    ``2 * ramp_s`` samples or fewer are only pinned.
    """
    out = np.array(v, dtype=np.float64)
    n = out.size
    can_ramp = n > 2 * ramp_s
    frac = np.arange(ramp_s + 1) / ramp_s
    if can_ramp and out[0] > threshold:
        out[: ramp_s + 1] = out[ramp_s] * frac
    if can_ramp and out[-1] > threshold:
        out[n - ramp_s - 1 :] = out[n - ramp_s - 1] * frac[::-1]
    out[0] = out[-1] = 0.0
    return out


def vehicle_smooth(v, d_veh, cfg: GenerationConfig | None = None):
    """Extra smoothing for sluggish vehicles (``d_veh`` strictly below the cutoff)."""
    cfg = cfg or GenerationConfig()
    if d_veh is None or d_veh >= cfg.heavy_vehicle_cutoff:
        return np.array(v, dtype=np.float64)
    return gaussian_smooth(v, cfg.smooth_sigma, cfg.heavy_kernel)


def correlated_noise(v, sigma_corr, corr_len=10.0, rng=None, return_noise=False):
    """Add smoothed white noise with standard deviation ``sigma_corr``.

    The noise is a Gaussian-filtered (scale ``corr_len`` s, +-3 scales)
    white sequence, rescaled to exactly ``sigma_corr``. Endpoints are
    re-zeroed and the result clamped at 0.
    """
    v = np.asarray(v, dtype=np.float64)
    if sigma_corr < 0:
        raise ValueError("sigma_corr must be non-negative")
    noise = np.zeros_like(v)
    if sigma_corr > 0 and v.size > 1:
        rng = rng if rng is not None else np.random.default_rng()
        half = max(1, int(math.ceil(3 * corr_len)))
        w = gaussian_kernel(corr_len, 2 * half + 1)
        white = rng.standard_normal(v.size + 2 * half)
        noise = np.convolve(white, w, mode="valid")
        noise -= noise.mean()
        sd = noise.std()
        noise = noise * (sigma_corr / sd) if sd > 0 else np.zeros_like(v)
    out = np.maximum(v + noise, 0.0)
    out[0] = out[-1] = 0.0
    return (out, noise) if return_noise else out


def trip_mean(v):
    """Mean speed as distance / duration (matches TripStats.avg_speed_mps)."""
    v = np.asarray(v, dtype=np.float64)
    return float(v[:-1].sum() / (v.size - 1))


def rescale_to_target(v, target):
    v = np.asarray(v, dtype=np.float64)
    cur = trip_mean(v)
    if not cur > 0:
        raise ValueError("cannot rescale a trajectory with zero mean speed")
    return v * (target / cur)


# ------------------------------------------------------------------ pipeline


def postprocess_pipeline(window, cond: ConditionVector, engine, cfg: GenerationConfig | None = None, rng=None):
    """Turn one sampled window into a MicroTrip.

    csdi: smooth, ramps, vehicle smoothing, correlated noise.
    unet: ramps, rescale to the conditioned mean speed.
    The result is trimmed to the conditioned duration, clamped at zero and
    has both endpoints pinned to zero.
    """
    cfg = cfg or GenerationConfig()
    vals = window.values if hasattr(window, "values") else np.atleast_2d(window)
    n = min(n_valid_for(cond.duration, vals.shape[-1]), window.n_valid if hasattr(window, "n_valid") else vals.shape[-1])
    v = np.maximum(vals[0, :n].astype(np.float64), 0.0)
    if engine == "csdi":
        v = gaussian_smooth(v, cfg.smooth_sigma, cfg.smooth_kernel)
        v = boundary_ramp(v, cfg.ramp_threshold, cfg.ramp_seconds)
        v = vehicle_smooth(v, cond.d_veh, cfg)
        if cfg.corr_sigma > 0:
            v = correlated_noise(v, cfg.corr_sigma, cfg.corr_length, rng)
    elif engine == "unet":
        v = boundary_ramp(v, cfg.ramp_threshold, cfg.ramp_seconds)
        if cfg.rescale_to_target and trip_mean(v) > 0:
            v = rescale_to_target(v, cond.avg_speed)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    v = np.maximum(v, 0.0)
    v[0] = v[-1] = 0.0
    trip = MicroTrip.from_speeds(v)
    verdict = validate_micro_trip(trip)
    if not verdict:
        raise AssertionError(f"post-processing produced an invalid trip: {verdict.violations[:3]}")
    return trip


def with_accel(trip: MicroTrip, length=WINDOW):
    """Two-channel (speed, acceleration) view of a trip, for inspection."""
    v = trip.speeds[:length]
    return np.stack([v, accel_channel(v, v.size)])


# ------------------------------------------------------------------ drivers


def generate_diffusion(
    model,
    sched: NoiseSchedule,
    conds,
    engine,
    cfg: GenerationConfig | None = None,
    seed=0,
    progress=None,
):
    """Sample one trip per condition with a trained denoiser.

    Sample ``i`` always uses RNG stream ``(seed, i)`` so the output does not
    depend on ``cfg.batch_size``.
    """
    cfg = cfg or GenerationConfig.for_engine(engine)
    channels = model.config.in_channels
    length = model.config.length
    guidance = GuidanceConfig(cfg.guidance_scale)
    trips = []
    conds = list(conds)
    for b0 in range(0, len(conds), cfg.batch_size):
        chunk = conds[b0 : b0 + cfg.batch_size]
        rngs = [trip_rng(seed, b0 + j) for j in range(len(chunk))]
        nv = np.array([n_valid_for(c.duration, length) for c in chunk])
        C = np.stack([c.values for c in chunk])
        x = sample_loop(model.predict, C, sched, nv, rngs, channels, length, guidance, x0_clip=cfg.x0_clip)
        for j, c in enumerate(chunk):
            win = state_to_window(x[j], nv[j])
            trips.append(postprocess_pipeline(win, c, engine, cfg, rngs[j]))
        if progress is not None:
            progress(len(trips), len(conds))
    return trips
