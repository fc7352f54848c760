"""Trip features, K-means driving regimes, PCA projection and stratified splits."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import derive_acceleration

log = logging.getLogger(__name__)

IDLE_SPEED = 0.5
FEATURE_NAMES = ("avg_speed", "max_speed", "speed_std", "idle_ratio", "stops_per_km", "accel_noise")


@dataclass(frozen=True)
class FeatureVector:
    avg_speed: float
    max_speed: float
    speed_std: float
    idle_ratio: float
    stops_per_km: float
    accel_noise: float

    def as_array(self):
        return np.array([getattr(self, n) for n in FEATURE_NAMES])


def _speeds(trip):
    return trip.speeds if hasattr(trip, "speeds") else np.asarray(trip, dtype=np.float64)


def count_stops(v, idle=IDLE_SPEED) -> int:
    """Initial rest plus every transition from moving (>= idle) to idle (< idle)."""
    still = v < idle
    return int(still[0]) + int(np.sum(~still[:-1] & still[1:]))


def extract_features(trip) -> FeatureVector:
    v = _speeds(trip)
    duration = v.size - 1
    distance = float(v[:-1].sum())
    if distance <= 0:
        raise ValueError("zero-distance trip: stops per km is undefined")
    acc = derive_acceleration(v)
    return FeatureVector(
        avg_speed=distance / duration,
        max_speed=float(v.max()),
        speed_std=float(v.std()),
        idle_ratio=float(np.mean(v < IDLE_SPEED)),
        stops_per_km=count_stops(v) / (distance / 1000.0),
        accel_noise=float(acc.std()),
    )


def feature_matrix(trips) -> np.ndarray:
    return np.stack([extract_features(t).as_array() for t in trips])


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    assignments: np.ndarray
    inertia_history: list = field(default_factory=list)
    seed: int = 0

    def standardize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.feature_means) / self.feature_stds

    def predict(self, X):
        Z = self.standardize(X)
        return _nearest(Z, self.centroids)[0]

    def to_dict(self):
        d = asdict(self)
        for key in ("centroids", "feature_means", "feature_stds", "assignments"):
            d[key] = np.asarray(d[key]).tolist()
        d["feature_names"] = list(FEATURE_NAMES)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=np.float64),
            feature_means=np.array(d["feature_means"], dtype=np.float64),
            feature_stds=np.array(d["feature_stds"], dtype=np.float64),
            assignments=np.array(d["assignments"], dtype=int),
            inertia_history=list(d.get("inertia_history", [])),
            seed=int(d.get("seed", 0)),
        )


def _nearest(Z, C):
    d2 = ((Z[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    lab = d2.argmin(axis=1)
    return lab, d2[np.arange(Z.shape[0]), lab]


def _kmeans_pp(Z, k, rng):
    n = Z.shape[0]
    centers = [Z[rng.integers(n)]]
    d2 = ((Z - centers[0]) ** 2).sum(-1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, ((Z - Z[idx]) ** 2).sum(-1))
    return np.array(centers)


def kmeans_fit(features, k=4, seed=0, max_iter=300, tol=1e-8, standardize=True) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding on z-scored features.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    iterations. ``inertia_history`` records the within-cluster sum of squares
    after every assignment step.
    """
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if standardize:
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
    else:
        mu, sd = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mu) / sd
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(Z, k, rng)
    history = []
    for _ in range(max_iter):
        lab, dist = _nearest(Z, C)
        history.append(float(dist.sum()))
        newC = C.copy()
        for j in range(k):
            members = Z[lab == j]
            if len(members):
                newC[j] = members.mean(axis=0)
        shift = np.max(np.linalg.norm(newC - C, axis=1))
        C = newC
        if shift < tol:
            break
    lab, dist = _nearest(Z, C)
    history.append(float(dist.sum()))
    return ClusterModel(k, C, mu, sd, lab, history, seed)


@dataclass
class PCAResult:
    coords: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    all_eigenvalues: np.ndarray
    kept_features: np.ndarray


def pca_project(features, dims=2) -> PCAResult:
    """Project z-scored features onto the leading covariance eigenvectors.

    Zero-variance columns are dropped (with a warning) before z-scoring.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 observations")
    sd = X.std(axis=0, ddof=1)
    keep = sd > 1e-12
    if not keep.all():
        log.warning("dropping %d zero-variance feature(s) before PCA", int((~keep).sum()))
    X = X[:, keep]
    Z = (X - X.mean(axis=0)) / sd[keep]
    cov = Z.T @ Z / (Z.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(evecs[np.abs(evecs).argmax(axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * np.where(signs == 0, 1.0, signs)
    dims = min(dims, evecs.shape[1])
    comps = evecs[:, :dims]
    total = evals.sum()
    ratio = evals[:dims] / total if total > 0 else np.zeros(dims)
    return PCAResult(Z @ comps, comps.T, evals[:dims], ratio, evals, np.flatnonzero(keep))


def stratified_split(labels, train_frac=0.8, seed=0):
    """Per-cluster random split; returns sorted (train_idx, test_idx).

    Each cluster contributes floor or ceil of ``train_frac * size`` trips to
    training; the roundings are chosen by largest remainder so the total
    train size is ``round(train_frac * n)``. Clusters with fewer than two
    members go wholly to training.
    """
    labels = np.asarray(labels)
    n = labels.size
    rng = np.random.default_rng(seed)
    groups = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    quota, frac_part, tiny = {}, {}, []
    for c, idx in groups.items():
        if idx.size < 2:
            log.warning("cluster %s has %d member(s); placing it in the training set", c, idx.size)
            tiny.append(c)
            continue
        exact = train_frac * idx.size
        quota[c] = int(np.floor(exact))
        frac_part[c] = exact - quota[c]
    target = int(round(train_frac * n)) - sum(groups[c].size for c in tiny)
    for c in sorted(frac_part, key=lambda c: (-frac_part[c], str(c))):
        if sum(quota.values()) >= target:
            break
        if frac_part[c] > 0:
            quota[c] += 1
    train, test = [], []
    for c, idx in groups.items():
        perm = rng.permutation(idx)
        if c in tiny:
            train.extend(perm)
            continue
        train.extend(perm[: quota[c]])
        test.extend(perm[quota[c] :])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def cluster_report(features, model: ClusterModel) -> list[dict]:
    """Per-cluster rows: count, mean avg/max speed, stops/km, idle ratio (%)."""
    X = np.asarray(features, dtype=np.float64)
    rows = []
    for j in range(model.k):
        m = model.assignments == j
        sub = X[m]
        if not len(sub):
            rows.append({"cluster": j, "count": 0})
            continue
        rows.append(
            {
                "cluster": j,
                "count": int(m.sum()),
                "avg_speed_mps": float(sub[:, 0].mean()),
                "max_speed_mps": float(sub[:, 1].mean()),
                "stops_per_km": float(sub[:, 4].mean()),
                "idle_ratio_pct": float(100 * sub[:, 3].mean()),
            }
        )
    return rows
