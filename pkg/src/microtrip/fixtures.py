"""Synthetic stand-ins for the survey data.

The generator draws micro-trips whose duration and speed statistics follow
the published dataset summary (duration median 187 s, mean 304 s, minimum
34 s; average speed 5.18 to 31.57 m/s) and whose regimes follow the four
cluster profiles (arterial, highway, congested, free-flow). It records the
ground truth it used so tests can compare against it.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import MicroTrip
from .ingest import Dataset

DURATION_MEDIAN = 187.0
DURATION_MEAN = 304.0
DURATION_MIN = 34
DURATION_MAX = 12841
AVG_SPEED_RANGE = (5.18, 31.57)

# label, share of trips, mean avg-speed (m/s), max/avg ratio, slowdowns per km
REGIMES = [
    ("Arterial/Suburban", 2224, 15.6, 22.6 / 15.6, 0.59),
    ("Highway/Interstate", 1020, 22.2, 30.8 / 22.2, 0.12),
    ("Congested/City", 636, 13.9, 21.8 / 13.9, 1.29),
    ("Free-flow Arterial", 2487, 16.7, 22.7 / 16.7, 0.28),
]

MIN_MOVING_SPEED = 0.6


@dataclass
class FixtureTruth:
    regimes: np.ndarray
    durations: np.ndarray
    target_avg_speeds: np.ndarray
    labels: list = field(default_factory=lambda: [r[0] for r in REGIMES])


def _duration(rng, max_duration):
    sigma = math.sqrt(2.0 * math.log(DURATION_MEAN / DURATION_MEDIAN))
    while True:
        d = int(round(rng.lognormal(math.log(DURATION_MEDIAN), sigma)))
        if DURATION_MIN <= d <= max_duration:
            return d


def _profile(rng, duration, target_avg, peak_ratio, slowdowns_per_km):
    """One stop-to-stop speed profile with roughly the requested mean speed.

    A speed-tracking loop follows a wandering reference under acceleration
    and braking limits, always keeping enough room to brake to rest by the
    last sample.
    """
    n = duration + 1
    t = np.arange(n)
    a_up = rng.uniform(1.2, 2.6)
    a_dn = rng.uniform(1.5, 3.0)
    # short trips cannot reach high means under these limits
    target_avg = min(target_avg, 0.4 * duration * a_up * a_dn / (a_up + a_dn))
    cruise = target_avg * rng.uniform(1.05, 1.2)
    ou = np.zeros(n)
    sd = 0.08 * rng.uniform(0.5, 1.5)
    theta = 0.04
    for i in range(1, n):
        ou[i] = ou[i - 1] * (1 - theta) + sd * math.sqrt(2 * theta) * rng.standard_normal()
    ref = np.minimum(cruise * (1.0 + ou), 38.0)
    km = target_avg * duration / 1000.0
    for _ in range(rng.poisson(slowdowns_per_km * km)):
        c = rng.uniform(0.2, 0.8) * n
        w = rng.uniform(8, 25)
        depth = rng.uniform(0.3, 0.7)
        ref *= 1.0 - depth * np.exp(-0.5 * ((t - c) / w) ** 2)
    gain = rng.uniform(0.15, 0.35)
    v = np.zeros(n)
    for i in range(1, n - 1):
        a = gain * (ref[i] - v[i - 1]) + 0.15 * rng.standard_normal()
        a = min(max(a, -a_dn), a_up)
        v[i] = min(max(v[i - 1] + a, MIN_MOVING_SPEED), a_dn * (n - 1 - i))
    mean = v[:-1].sum() / duration
    v *= float(np.clip(target_avg / mean, 0.85, 1.2))
    v[1:-1] = np.maximum(v[1:-1], MIN_MOVING_SPEED)
    v[0] = v[-1] = 0.0
    lo, hi = AVG_SPEED_RANGE
    mean = v[:-1].sum() / duration
    if not lo <= mean <= hi:
        v *= min(max(mean, lo + 1e-6), hi - 1e-6) / mean
    return v


def generate_fixture(n_trips=200, seed=0, max_duration=DURATION_MAX, regime_weights=None):
    """Return (Dataset, FixtureTruth) with ``n_trips`` synthetic micro-trips."""
    rng = np.random.default_rng(seed)
    w = np.array([r[1] for r in REGIMES], dtype=float) if regime_weights is None else np.asarray(regime_weights, float)
    w = w / w.sum()
    lo, hi = AVG_SPEED_RANGE
    trips, regimes, durs, targets = [], [], [], []
    for _ in range(n_trips):
        k = int(rng.choice(len(REGIMES), p=w))
        _, _, mean_speed, peak, spk = REGIMES[k]
        target = float(np.clip(rng.normal(mean_speed, 0.25 * mean_speed), lo + 0.5, hi - 1.0))
        d = _duration(rng, max_duration)
        v = _profile(rng, d, target, peak, spk)
        trips.append(MicroTrip.from_speeds(v))
        regimes.append(k)
        durs.append(d)
        targets.append(float(v[:-1].sum() / d))
    truth = FixtureTruth(np.array(regimes), np.array(durs), np.array(targets))
    ds = Dataset(trips, {"fixture": {"n_trips": n_trips, "seed": seed, "max_duration": max_duration}})
    return ds, truth


def fixture_trace_csv(ds, trips_per_trace=4, idle_s=5, seed=0) -> str:
    """Concatenate micro-trips into raw traces (``trip_id,t,speed_mps``).

    Consecutive micro-trips are separated by ``idle_s`` seconds at rest, so
    segmentation at the default rest threshold recovers them exactly.
    """
    rng = np.random.default_rng(seed)
    buf = io.StringIO()
    buf.write("trip_id,t,speed_mps\n")
    trips = list(ds)
    for start in range(0, len(trips), trips_per_trace):
        chunk = trips[start : start + trips_per_trace]
        trace = [np.zeros(idle_s)]
        for trip in chunk:
            trace.append(trip.speeds)
            trace.append(np.zeros(int(rng.integers(1, idle_s + 1))))
        v = np.concatenate(trace)
        tid = f"trace{start // trips_per_trace:05d}"
        for t, s in enumerate(v):
            buf.write(f"{tid},{t},{float(s)!r}\n")
    return buf.getvalue()
