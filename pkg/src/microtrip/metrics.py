"""Distributional, kinematic and utility scores for synthetic micro-trips.

Most estimators take pooled per-second samples or per-trip summary vectors.
``full_report`` bundles everything into a :class:`MetricsReport`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.spatial.distance import cdist
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.model_selection import GroupShuffleSplit

from .analysis import extract_features
from .core import BOUNDARY_TOL, derive_acceleration

VSP_MASS_FACTOR = 1.1
VSP_ROLLING = 0.132
VSP_DRAG = 0.000302
GRAVITY = 9.81

SAFD_SPEED_EDGES = np.arange(0.0, 41.0, 1.0)
SAFD_ACCEL_EDGES = np.arange(-5.0, 5.0 + 1e-9, 0.25)
N_SLICES = 64
SLICE_SEED = 20240

N_TREES = 50
TREE_DEPTH = 6
TSTR_HEAD_S = 30


def _nonempty(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    return x


# ------------------------------------------------------------------ 1D


def wasserstein_1d(a, b, wa=None, wb=None) -> float:
    """W1 between two (optionally weighted) empirical distributions."""
    a, b = _nonempty(a, "a"), _nonempty(b, "b")
    return float(sps.wasserstein_distance(a, b, wa, wb))


def ks_statistic(a, b) -> float:
    """Largest gap between the two empirical CDFs."""
    a, b = _nonempty(a, "a"), _nonempty(b, "b")
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(sps.ks_2samp(a, b, method="asymp").statistic)


# ------------------------------------------------------------------ SAFD


@dataclass(frozen=True)
class SafdHistogram:
    """Joint speed/acceleration frequency table, mass normalised to 1."""

    mass: np.ndarray
    speed_edges: np.ndarray
    accel_edges: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.speed_edges.size - 1, self.accel_edges.size - 1):
            raise ValueError("mass shape does not match the bin edges")
        if np.any(m < 0) or not math.isclose(m.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("SAFD mass must be non-negative and sum to 1")
        object.__setattr__(self, "mass", m)

    @property
    def bin_widths(self):
        return np.diff(self.speed_edges), np.diff(self.accel_edges)

    def centers(self):
        sc = 0.5 * (self.speed_edges[1:] + self.speed_edges[:-1])
        ac = 0.5 * (self.accel_edges[1:] + self.accel_edges[:-1])
        S, A = np.meshgrid(sc, ac, indexing="ij")
        return np.column_stack([S.ravel(), A.ravel()])

    def same_grid(self, other):
        return np.array_equal(self.speed_edges, other.speed_edges) and np.array_equal(
            self.accel_edges, other.accel_edges
        )

    @classmethod
    def from_trips(cls, trips, speed_edges=SAFD_SPEED_EDGES, accel_edges=SAFD_ACCEL_EDGES):
        """Histogram of (v_t, a_t) pairs; out-of-range values go to the edge bins."""
        v, a = pooled_speed_accel(trips)
        v = np.clip(v, speed_edges[0], np.nextafter(speed_edges[-1], -np.inf))
        a = np.clip(a, accel_edges[0], np.nextafter(accel_edges[-1], -np.inf))
        h, _, _ = np.histogram2d(v, a, bins=[speed_edges, accel_edges])
        return cls(h / h.sum(), np.asarray(speed_edges), np.asarray(accel_edges))


def slice_directions(n=N_SLICES, seed=SLICE_SEED):
    """Stratified angles over the half circle, one jittered angle per sector."""
    u = np.random.default_rng(seed).random(n)
    theta = math.pi * (np.arange(n) + u) / n
    return np.column_stack([np.cos(theta), np.sin(theta)])


def sliced_wasserstein(points, wa, wb, n_slices=N_SLICES, seed=SLICE_SEED):
    """Sliced W1 between two weightings of the same 2D support.

    The mean over directions is multiplied by pi/2, the reciprocal of the
    average of ``|cos|`` over the circle, so a pure translation by ``d``
    scores ``|d|``.
    """
    dirs = slice_directions(n_slices, seed)
    proj = points @ dirs.T
    keep_a, keep_b = wa > 0, wb > 0
    vals = [
        sps.wasserstein_distance(proj[keep_a, k], proj[keep_b, k], wa[keep_a], wb[keep_b])
        for k in range(dirs.shape[0])
    ]
    return float(np.mean(vals) * math.pi / 2)


def wasserstein_2d_safd(real: SafdHistogram, synth: SafdHistogram, n_slices=N_SLICES) -> float:
    if not real.same_grid(synth):
        raise ValueError("SAFD histograms use different grids")
    pts = real.centers()
    return sliced_wasserstein(pts, real.mass.ravel(), synth.mass.ravel(), n_slices)


# ------------------------------------------------------------------ MMD


def mmd_rbf(a, b, bandwidth=1.0) -> float:
    """Unbiased squared MMD with an RBF kernel, floored at zero."""
    a, b = np.atleast_2d(np.asarray(a, dtype=np.float64)), np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise ValueError("MMD needs at least 2 samples per side")
    g = 1.0 / (2.0 * bandwidth**2)
    kaa = np.exp(-g * cdist(a, a, "sqeuclidean"))
    kbb = np.exp(-g * cdist(b, b, "sqeuclidean"))
    kab = np.exp(-g * cdist(a, b, "sqeuclidean"))
    xx = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    yy = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    return float(max(xx + yy - 2.0 * kab.mean(), 0.0))


# ------------------------------------------------------------------ kinematics


def vsp(v, a, grade=0.0):
    """Vehicle specific power (kW/ton) per second for a light-duty vehicle."""
    v, a = np.asarray(v, dtype=np.float64), np.asarray(a, dtype=np.float64)
    if v.shape != a.shape:
        raise ValueError("speed and acceleration lengths differ")
    return v * (VSP_MASS_FACTOR * a + GRAVITY * grade + VSP_ROLLING) + VSP_DRAG * v**3


def trip_vsp(trip):
    v = _speeds(trip)
    return vsp(v[:-1], derive_acceleration(v))


def ldlj(v) -> float:
    """Log dimensionless jerk of a speed profile; larger means rougher.

    ``ln(T^3 / v_peak^2 * sum(j^2))`` with T the duration in seconds and j
    the second difference of speed. Invariant to rescaling the speed.
    """
    v = _speeds(v)
    T = v.size - 1
    peak = float(np.max(v)) if v.size else 0.0
    if T < 3 or peak <= 0:
        raise ValueError("LDLJ needs a duration of at least 3 s and a positive peak speed")
    j = np.diff(v, 2)
    return float(math.log(T**3 / peak**2 * float(np.dot(j, j))))


def boundary_violation_rate(trips, thresh=BOUNDARY_TOL) -> float:
    """Percentage of trips whose first or last speed exceeds ``thresh``."""
    trips = list(trips)
    if not trips:
        return 0.0
    bad = sum(1 for t in trips if abs(_speeds(t)[0]) > thresh or abs(_speeds(t)[-1]) > thresh)
    return 100.0 * bad / len(trips)


# ------------------------------------------------------------------ summaries


def _speeds(trip):
    return trip.speeds if hasattr(trip, "speeds") else np.asarray(trip, dtype=np.float64)


def pooled_speed_accel(trips):
    vs, as_ = [], []
    for t in trips:
        v = _speeds(t)
        vs.append(v[:-1])
        as_.append(np.diff(v))
    return np.concatenate(vs), np.concatenate(as_)


SUMMARY_NAMES = ("avg_speed", "max_speed", "speed_std", "idle_ratio", "stops_per_km", "accel_noise", "duration", "vsp_mean")


def trip_summary(trip) -> np.ndarray:
    """Six analysis features plus duration and mean VSP."""
    f = extract_features(trip).as_array()
    v = _speeds(trip)
    return np.concatenate([f, [v.size - 1, float(trip_vsp(trip).mean())]])


def summary_matrix(trips) -> np.ndarray:
    return np.stack([trip_summary(t) for t in trips])


def zscore_against(ref, *others):
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [(x - mu) / sd for x in (ref, *others)]


# ------------------------------------------------------------------ utility


def discriminative_score(real, synth, seed=0, test_frac=0.3) -> float:
    """Held-out accuracy of a random forest separating real from synthetic trips.

    The 70/30 split keeps identical summary rows on the same side.

    ``real`` and ``synth`` are trips or precomputed summary matrices.
    """
    Xr = real if isinstance(real, np.ndarray) else summary_matrix(real)
    Xs = synth if isinstance(synth, np.ndarray) else summary_matrix(synth)
    if len(Xr) < 20 or len(Xs) < 20:
        raise ValueError("discriminative score needs at least 20 trips per side")
    X = np.vstack([Xr, Xs])
    y = np.r_[np.zeros(len(Xr), int), np.ones(len(Xs), int)]
    # identical summaries share a group so an exact copy never sits on the
    # other side of the split (bootstrap resamples would leak otherwise)
    _, groups = np.unique(X, axis=0, return_inverse=True)
    split = GroupShuffleSplit(n_splits=1, test_size=test_frac, random_state=seed)
    tr, te = next(split.split(X, y, groups.ravel()))
    Xtr, Xte, ytr, yte = X[tr], X[te], y[tr], y[te]
    clf = RandomForestClassifier(n_estimators=N_TREES, max_depth=TREE_DEPTH, random_state=seed, n_jobs=1)
    clf.fit(Xtr, ytr)
    return float(np.mean(clf.predict(Xte) == yte))


def tstr_features(trips, head=TSTR_HEAD_S):
    rows = []
    for t in trips:
        v = _speeds(t)
        h = np.zeros(head)
        k = min(head, v.size)
        h[:k] = v[:k]
        rows.append(np.r_[h, v.size - 1])
    return np.stack(rows)


def tstr_target(trips):
    """Trip average speed in km/h."""
    out = []
    for t in trips:
        v = _speeds(t)
        out.append(3.6 * v[:-1].sum() / (v.size - 1))
    return np.array(out)


@dataclass
class TstrResult:
    mae_kmh: float
    baseline_mae_kmh: float
    n_train: int
    n_test: int


def tstr_mae(train_trips, test_trips, seed=0) -> TstrResult:
    """Fit a forest on ``train_trips``, report MAE (km/h) on ``test_trips``.

    Task: predict average speed from the first 30 s of speed plus duration.
    The constant-mean baseline is reported alongside.
    """
    train_trips, test_trips = list(train_trips), list(test_trips)
    if len(train_trips) < 5 or len(test_trips) < 1:
        raise ValueError("TSTR needs at least 5 training and 1 test trip")
    Xtr, ytr = tstr_features(train_trips), tstr_target(train_trips)
    Xte, yte = tstr_features(test_trips), tstr_target(test_trips)
    reg = RandomForestRegressor(n_estimators=N_TREES, max_depth=TREE_DEPTH, random_state=seed, n_jobs=1)
    reg.fit(Xtr, ytr)
    mae = float(np.mean(np.abs(reg.predict(Xte) - yte)))
    base = float(np.mean(np.abs(ytr.mean() - yte)))
    return TstrResult(mae, base, len(train_trips), len(test_trips))


# ------------------------------------------------------------------ report


REPORT_FIELDS = (
    "wd_speed",
    "wd_accel",
    "wd_vsp",
    "wd_safd_2d",
    "mmd",
    "ks_vsp",
    "boundary_violation_pct",
    "ldlj_mean",
    "max_speed",
    "accel_std",
    "discriminative_score",
    "tstr_mae_kmh",
)


@dataclass
class MetricsReport:
    wd_speed: float
    wd_accel: float
    wd_vsp: float
    wd_safd_2d: float
    mmd: float
    ks_vsp: float
    boundary_violation_pct: float
    ldlj_mean: float
    max_speed: float
    accel_std: float
    discriminative_score: float
    tstr_mae_kmh: float
    n_real: int
    n_synth: int
    reference: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in REPORT_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"metric {name} is not finite")
        if not 0 <= self.boundary_violation_pct <= 100:
            raise ValueError("boundary violation percentage out of range")
        if not 0 <= self.discriminative_score <= 1:
            raise ValueError("discriminative score out of range")

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "synthetic", "real"])
        for name in REPORT_FIELDS:
            ref = self.reference.get(name, "")
            w.writerow([name, repr(float(getattr(self, name))), repr(float(ref)) if ref != "" else ""])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def kinematic_summary(trips):
    v, a = pooled_speed_accel(trips)
    lj = [ldlj(t) for t in trips]
    return {"ldlj_mean": float(np.mean(lj)), "max_speed": float(v.max()), "accel_std": float(a.std())}


def full_report(real, synth, seed=0, bandwidth=1.0, tstr_train=None, config=None) -> MetricsReport:
    """Compare synthetic trips with real ones.

    ``tstr_train`` optionally supplies the real training split, whose TSTR
    score is added under ``extras`` as the train-on-real control.
    """
    real, synth = list(real), list(synth)
    vr, ar = pooled_speed_accel(real)
    vs, as_ = pooled_speed_accel(synth)
    pr, ps = vsp(vr, ar), vsp(vs, as_)
    Sr, Ss = summary_matrix(real), summary_matrix(synth)
    zr, zs = zscore_against(Sr, Ss)
    kin_s, kin_r = kinematic_summary(synth), kinematic_summary(real)
    tstr = tstr_mae(synth, real, seed)
    extras = {"tstr_baseline_mae_kmh": tstr.baseline_mae_kmh}
    if tstr_train is not None:
        extras["tstr_real_control_mae_kmh"] = tstr_mae(tstr_train, real, seed).mae_kmh
    return MetricsReport(
        wd_speed=wasserstein_1d(vr, vs),
        wd_accel=wasserstein_1d(ar, as_),
        wd_vsp=wasserstein_1d(pr, ps),
        wd_safd_2d=wasserstein_2d_safd(SafdHistogram.from_trips(real), SafdHistogram.from_trips(synth)),
        mmd=mmd_rbf(zr, zs, bandwidth),
        ks_vsp=ks_statistic(pr, ps),
        boundary_violation_pct=boundary_violation_rate(synth),
        ldlj_mean=kin_s["ldlj_mean"],
        max_speed=kin_s["max_speed"],
        accel_std=kin_s["accel_std"],
        discriminative_score=discriminative_score(Sr, Ss, seed),
        tstr_mae_kmh=tstr.mae_kmh,
        n_real=len(real),
        n_synth=len(synth),
        reference={**kin_r, "boundary_violation_pct": boundary_violation_rate(real)},
        extras=extras,
        config={"seed": seed, "bandwidth": bandwidth, "n_slices": N_SLICES, **(config or {})},
    )
