"""Second-order Markov chain baseline with endpoint-conditioned (bridge) sampling.

Speeds are binned with width ``delta_v``; the chain runs on pair-states
``(s_{t-1}, s_t)``. Bridge sampling reweights each transition by the
backward message, the probability of reaching bin 0 exactly at the final
step, so every draw starts and ends at rest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import MicroTrip, validate_micro_trip

DELTA_V = 0.5


class InfeasibleBridgeError(RuntimeError):
    pass


def discretize(v, delta_v=DELTA_V):
    """Bin index ``floor(v / delta_v)``; negative speeds are rejected."""
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("speeds must be non-negative")
    idx = np.floor(arr / delta_v).astype(int)
    return int(idx) if idx.ndim == 0 else idx


def bin_center(b, delta_v=DELTA_V):
    return (np.asarray(b, dtype=np.float64) + 0.5) * delta_v


def trip_rng(seed, index):
    """Independent generator for output trip ``index`` under base ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


@dataclass
class TransitionModel:
    """Pair-state transition probabilities ``probs[a, b, c] = P(s_t=c | s_{t-2}=a, s_{t-1}=b)``.

    ``start`` is the distribution of the first bin after rest. Rows never
    observed (and unsmoothed) are all zero: dead ends for the bridge.
    """

    delta_v: float
    probs: np.ndarray
    start: np.ndarray
    counts: np.ndarray | None = None
    start_counts: np.ndarray | None = None
    alpha: float = 0.0
    _gamma: list = field(default_factory=list, repr=False)

    @property
    def n_bins(self):
        return self.probs.shape[0]

    @property
    def K(self):
        return self.n_bins - 1

    @classmethod
    def from_probs(cls, probs, start, delta_v=DELTA_V):
        probs = np.asarray(probs, dtype=np.float64)
        start = np.asarray(start, dtype=np.float64)
        return cls(delta_v, probs, start / start.sum())

    # backward messages as a function of steps remaining, stored as
    # (log-scale, normalised table) pairs and extended on demand
    def _steps_remaining(self, k_max):
        nb = self.n_bins
        if not self._gamma:
            g0 = np.zeros((nb, nb))
            g0[:, 0] = 1.0
            self._gamma.append((0.0, g0))
        while len(self._gamma) <= k_max:
            logs, g = self._gamma[-1]
            nxt = np.einsum("abc,bc->ab", self.probs, g)
            m = nxt.max()
            if m <= 0:
                self._gamma.append((-np.inf, nxt))
            else:
                self._gamma.append((logs + np.log(m), nxt / m))
        return self._gamma

    def log_gamma(self, k):
        logs, g = self._steps_remaining(k)[k]
        with np.errstate(divide="ignore"):
            return logs + np.log(g)

    def to_dict(self):
        return {
            "version": 1,
            "delta_v": self.delta_v,
            "alpha": self.alpha,
            "n_bins": self.n_bins,
            "start": self.start.tolist(),
            "counts": _sparse(self.counts) if self.counts is not None else None,
            "start_counts": self.start_counts.tolist() if self.start_counts is not None else None,
            "probs": None if self.counts is not None else self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != 1:
            raise ValueError(f"unsupported Markov model version {d.get('version')!r}")
        if d.get("counts") is not None:
            nb = int(d["n_bins"])
            counts = np.zeros((nb, nb, nb))
            for a, b, c, n in d["counts"]:
                counts[a, b, c] = n
            return _from_counts(counts, np.array(d["start_counts"], dtype=float), d["delta_v"], d["alpha"])
        return cls.from_probs(np.array(d["probs"]), np.array(d["start"]), d["delta_v"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _sparse(counts):
    idx = np.argwhere(counts > 0)
    return [[int(a), int(b), int(c), float(counts[a, b, c])] for a, b, c in idx]


def _normalise(counts, alpha):
    sm = counts + alpha
    tot = sm.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, sm / np.where(tot > 0, tot, 1.0), 0.0)


def _from_counts(counts, start_counts, delta_v, alpha):
    probs = _normalise(counts, alpha)
    start = _normalise(start_counts, alpha)
    return TransitionModel(delta_v, probs, start, counts, start_counts, alpha)


def fit_second_order(trips, delta_v=DELTA_V, alpha=0.0, n_bins=None) -> TransitionModel:
    """Count consecutive bin triples over every trip and normalise rows.

    ``alpha`` adds Laplace pseudo-counts to every successor bin.
    """
    binned = [discretize(t.speeds if hasattr(t, "speeds") else np.asarray(t), delta_v) for t in trips]
    if not binned:
        raise ValueError("empty training set")
    nb = n_bins or int(max(b.max() for b in binned)) + 1
    counts = np.zeros((nb, nb, nb))
    start_counts = np.zeros(nb)
    for s in binned:
        if s.size >= 2:
            start_counts[s[1]] += 1
        if s.size >= 3:
            np.add.at(counts, (s[:-2], s[1:-1], s[2:]), 1.0)
    return _from_counts(counts, start_counts, delta_v, alpha)


@dataclass
class BackwardTable:
    """Log backward messages for horizon ``T``.

    ``log_beta[t, a, b]`` is the log probability of ending in bin 0 at step
    ``T`` from pair-state ``(s_{t-1}, s_t) = (a, b)``. Row ``t = 0`` holds only
    the virtual start pair ``(0, 0)``, whose successor law is ``model.start``.
    """

    T: int
    log_beta: np.ndarray

    def beta(self):
        return np.exp(self.log_beta)

    @property
    def log_beta0(self):
        return float(self.log_beta[0, 0, 0])


def backward_messages(model: TransitionModel, T: int) -> BackwardTable:
    if T < 2:
        raise ValueError("horizon must be at least 2")
    nb = model.n_bins
    lb = np.full((T + 1, nb, nb), -np.inf)
    for t in range(1, T + 1):
        lb[t] = model.log_gamma(T - t)
    with np.errstate(divide="ignore"):
        lb0 = _logsumexp(np.log(model.start) + lb[1, 0, :])
    lb[0, 0, 0] = lb0
    if not np.isfinite(lb0):
        raise InfeasibleBridgeError(f"no path returns to rest after exactly {T} steps")
    return BackwardTable(T, lb)


def _logsumexp(x):
    m = np.max(x)
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.exp(x - m).sum()))


def _draw(logw, rng):
    m = logw.max()
    w = np.exp(logw - m)
    w /= w.sum()
    return int(rng.choice(w.size, p=w))


def sample_bridge_bins(model: TransitionModel, T: int, rng) -> np.ndarray:
    """Bin path ``s_0 .. s_T`` with ``s_0 = s_T = 0`` drawn from the bridge law."""
    if T < 2:
        raise ValueError("horizon must be at least 2")
    model._steps_remaining(T)
    with np.errstate(divide="ignore"):
        logP = np.log(model.probs)
        w = np.log(model.start) + model.log_gamma(T - 1)[0]
    if not np.isfinite(w).any():
        raise InfeasibleBridgeError(f"no path returns to rest after exactly {T} steps")
    s = np.zeros(T + 1, dtype=int)
    s[1] = _draw(w, rng)
    for t in range(1, T):
        w = logP[s[t - 1], s[t]] + model.log_gamma(T - t - 1)[s[t]]
        s[t + 1] = _draw(w, rng)
    return s


def sample_bridge(model: TransitionModel, T: int, rng, table: BackwardTable | None = None) -> MicroTrip:
    """Draw one micro-trip of duration ``T`` seconds; endpoints are exact zeros."""
    if table is not None and table.T != T:
        raise ValueError("backward table horizon does not match T")
    s = sample_bridge_bins(model, T, rng)
    v = bin_center(s, model.delta_v)
    v[0] = v[-1] = 0.0
    return MicroTrip.from_speeds(v)


def smooth_markov(trip, window=5) -> MicroTrip:
    """Moving-average the acceleration, re-integrate from rest, re-pin the end.

    The centred average uses edge replication; trips shorter than ``window``
    samples are returned unchanged.
    """
    v = trip.speeds if hasattr(trip, "speeds") else np.asarray(trip, dtype=np.float64)
    if v.size < window:
        return trip if isinstance(trip, MicroTrip) else MicroTrip.from_speeds(v)
    a = np.diff(v)
    half = window // 2
    ap = np.pad(a, half, mode="edge")
    af = np.convolve(ap, np.ones(window) / window, mode="valid")
    out = np.concatenate([[0.0], np.cumsum(af)])
    out = np.maximum(out, 0.0)
    out[0] = out[-1] = 0.0
    return MicroTrip.from_speeds(out)


def generate_markov(model: TransitionModel, durations, seed=0, smooth=True) -> list[MicroTrip]:
    """One bridge sample per requested duration, each from its own RNG stream."""
    trips = []
    for i, T in enumerate(durations):
        trip = sample_bridge(model, int(T), trip_rng(seed, i))
        if smooth:
            trip = smooth_markov(trip)
        assert validate_micro_trip(trip), "bridge produced an invalid trip"
        trips.append(trip)
    return trips
