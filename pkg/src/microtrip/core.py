"""Trajectory types and kinematic helpers shared by every other module.

Speeds are m/s sampled at 1 Hz. A trajectory with ``n`` samples
``v_0 .. v_{n-1}`` has duration ``n - 1`` seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

WINDOW = 512
BOUNDARY_TOL = 0.1


class DegenerateInputError(ValueError):
    """Raised when a sequence is too short for the requested derivation."""


class InvalidTrajectoryError(ValueError):
    pass


def _as_speeds(samples) -> np.ndarray:
    v = np.array(samples, dtype=np.float64, copy=True).reshape(-1)
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class SpeedTrajectory:
    samples: np.ndarray

    def __post_init__(self):
        v = _as_speeds(self.samples)
        if v.size < 2:
            raise InvalidTrajectoryError("a trajectory needs at least 2 samples")
        if not np.all(np.isfinite(v)):
            raise InvalidTrajectoryError("non-finite speed sample")
        if np.any(v < 0):
            raise InvalidTrajectoryError("negative speed sample")
        object.__setattr__(self, "samples", v)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        return isinstance(other, SpeedTrajectory) and np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True)
class TripStats:
    duration_s: float
    distance_m: float
    avg_speed_mps: float
    max_speed_mps: float
    accel_std: float


@dataclass(frozen=True, eq=False)
class MicroTrip:
    """A stop-to-stop segment: first and last samples are exactly zero."""

    trajectory: SpeedTrajectory

    def __post_init__(self):
        traj = self.trajectory
        if not isinstance(traj, SpeedTrajectory):
            traj = SpeedTrajectory(traj)
            object.__setattr__(self, "trajectory", traj)
        v = traj.samples
        if v[0] != 0.0 or v[-1] != 0.0:
            raise InvalidTrajectoryError(f"micro-trip must start and end at rest (got {v[0]}, {v[-1]})")

    @classmethod
    def from_speeds(cls, speeds):
        return cls(SpeedTrajectory(speeds))

    @property
    def speeds(self) -> np.ndarray:
        return self.trajectory.samples

    @property
    def duration(self) -> int:
        return len(self.trajectory) - 1

    @cached_property
    def stats(self) -> TripStats:
        return trip_stats(self)

    def __len__(self):
        return len(self.trajectory)

    def __eq__(self, other):
        return isinstance(other, MicroTrip) and self.trajectory == other.trajectory

    __hash__ = None


def _values(x) -> np.ndarray:
    if isinstance(x, MicroTrip):
        return x.speeds
    if isinstance(x, SpeedTrajectory):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def derive_acceleration(traj) -> np.ndarray:
    """Forward difference ``a_t = v_{t+1} - v_t`` (m/s^2 at 1 Hz)."""
    v = _values(traj)
    if v.size < 2:
        raise DegenerateInputError("acceleration needs at least 2 speed samples")
    return np.diff(v)


def derive_jerk(acc) -> np.ndarray:
    a = np.asarray(acc, dtype=np.float64)
    if a.size < 2:
        raise DegenerateInputError("jerk needs at least 2 acceleration samples")
    return np.diff(a)


def trip_stats(trip) -> TripStats:
    """Summary statistics of one micro-trip.

    Distance uses the rectangle rule over ``v_0 .. v_{T-1}``; for a
    micro-trip the final sample is zero so this equals the plain sum.
    """
    v = _values(trip)
    duration = v.size - 1
    distance = float(v[:-1].sum())
    avg = distance / duration
    acc = np.diff(v)
    return TripStats(
        duration_s=float(duration),
        distance_m=distance,
        avg_speed_mps=avg,
        max_speed_mps=float(v.max()),
        accel_std=float(acc.std()),
    )


@dataclass(frozen=True, eq=False)
class PaddedWindow:
    """Fixed-length network state: (channels, WINDOW) values plus validity mask.

    Channel 0 holds speed; the optional channel 1 holds the forward
    difference of channel 0 over the valid region (last valid entry is 0).
    """

    values: np.ndarray
    valid_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]

    @property
    def n_valid(self):
        return int(self.valid_mask.sum())

    def speeds(self) -> np.ndarray:
        return self.values[0, : self.n_valid]


def accel_channel(v: np.ndarray, n_valid: int) -> np.ndarray:
    out = np.zeros_like(v)
    if n_valid >= 2:
        out[: n_valid - 1] = np.diff(v[:n_valid])
    return out


def pad_or_truncate(traj, length: int = WINDOW, channels: int = 1) -> PaddedWindow:
    """Zero-pad on the right (or keep the head) to exactly ``length`` samples."""
    v = _values(traj)
    if v.size < 2:
        raise DegenerateInputError("need at least 2 samples")
    if channels not in (1, 2):
        raise ValueError("channels must be 1 or 2")
    n = min(v.size, length)
    vals = np.zeros((channels, length))
    vals[0, :n] = v[:n]
    if channels == 2:
        vals[1] = accel_channel(vals[0], n)
    mask = np.zeros(length, dtype=bool)
    mask[:n] = True
    return PaddedWindow(vals, mask)


def boundary_mask(n_valid: int, length: int = WINDOW) -> np.ndarray:
    """Mask with ones at index 0 and at the last valid index."""
    m = np.zeros(length, dtype=bool)
    m[0] = True
    m[min(n_valid, length) - 1] = True
    return m


@dataclass
class ValidityVerdict:
    valid: bool
    violations: list

    def __bool__(self):
        return self.valid


def validate_micro_trip(traj, tol: float = 0.0) -> ValidityVerdict:
    """Check boundary, sign and finiteness conditions without raising.

    ``tol`` is the allowed endpoint magnitude; construction uses exact zero,
    evaluation uses :data:`BOUNDARY_TOL`.
    """
    v = np.asarray(_values(traj), dtype=np.float64).reshape(-1)
    out = []
    if v.size < 2:
        out.append(("length", -1, float(v.size)))
        return ValidityVerdict(False, out)
    bad = np.flatnonzero(~np.isfinite(v))
    out += [("non_finite", int(i), float(v[i])) for i in bad]
    neg = np.flatnonzero(np.isfinite(v) & (v < 0))
    out += [("negative", int(i), float(v[i])) for i in neg]
    for i in (0, v.size - 1):
        if np.isfinite(v[i]) and abs(v[i]) > tol:
            out.append(("boundary", i, float(v[i])))
    return ValidityVerdict(not out, out)
