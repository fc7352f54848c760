import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from microtrip.analysis import (
    ClusterModel,
    cluster_report,
    count_stops,
    extract_features,
    feature_matrix,
    kmeans_fit,
    pca_project,
    stratified_split,
)
from microtrip.fixtures import generate_fixture

from oracles import adjusted_rand


def blobs(n_per=50, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0, 0, 0, 0, 0], [8, 0, 0, 8, 0, 0], [0, 8, 0, 0, 8, 0], [0, 0, 8, 0, 0, 8]], float)
    X = np.concatenate([c + rng.standard_normal((n_per, 6)) for c in centers])
    y = np.repeat(np.arange(4), n_per)
    return X, y


def test_idle_ratio_hand_count():
    f = extract_features([0, 10, 10, 10, 0])
    assert f.idle_ratio == pytest.approx(0.4)
    assert f.avg_speed == 7.5 and f.max_speed == 10


def test_speed_std_textbook_formula():
    v = np.array([0, 4, 8, 8, 8, 8, 8, 4, 0], float)
    mu = v.mean()
    want = np.sqrt(((v - mu) ** 2).sum() / v.size)
    assert extract_features(v).speed_std == pytest.approx(want, rel=1e-12)


def test_highway_trip_has_few_stops_per_km():
    v = np.concatenate([[0], np.linspace(1, 30, 30), np.full(600, 30.0), np.linspace(30, 1, 30), [0]])
    f = extract_features(v)
    assert f.stops_per_km < 0.12
    city = np.tile([0, 3, 6, 3], 30)
    city = np.append(city, 0)
    assert extract_features(city).stops_per_km > 10 * f.stops_per_km


def test_count_stops():
    assert count_stops(np.array([0, 5, 0, 5, 0])) == 3


def test_zero_distance_trip_rejected():
    with pytest.raises(ValueError):
        extract_features([0, 0, 0])


def test_kmeans_recovers_blobs():
    X, y = blobs()
    m = kmeans_fit(X, 4, seed=0)
    ari = adjusted_rand(y, m.assignments)
    assert ari > 0.9
    assert ari == pytest.approx(adjusted_rand_score(y, m.assignments))


def test_kmeans_single_cluster_is_mean():
    X, _ = blobs(10)
    m = kmeans_fit(X, 1, standardize=False)
    np.testing.assert_allclose(m.centroids[0], X.mean(axis=0), atol=1e-12)


def test_kmeans_duplicate_points_zero_inertia():
    X = np.repeat(np.array([[0.0, 1], [5, 5], [9, 0]]), 4, axis=0)
    m = kmeans_fit(X, 3, seed=1)
    assert m.inertia_history[-1] == pytest.approx(0.0, abs=1e-20)


def test_kmeans_needs_k_points():
    with pytest.raises(ValueError):
        kmeans_fit(np.zeros((3, 6)), 4)


def test_kmeans_inertia_non_increasing_and_serialises():
    X, _ = blobs(30, seed=3)
    m = kmeans_fit(X, 4, seed=2)
    h = np.array(m.inertia_history)
    assert np.all(np.diff(h) <= 1e-9)
    back = ClusterModel.from_dict(m.to_dict())
    assert np.array_equal(back.predict(X), m.predict(X))


def test_pca_on_a_line():
    t = np.linspace(0, 1, 40)[:, None]
    X = t * np.array([[1, 2, -1, 0.5, 3, 1]])
    r = pca_project(X, 2)
    assert r.explained_variance_ratio[0] == pytest.approx(1.0)


def test_pca_isotropic_gaussian():
    X = np.random.default_rng(0).standard_normal((20000, 6))
    r = pca_project(X, 6)
    assert np.all(np.abs(r.explained_variance_ratio - 1 / 6) < 0.05)


def test_pca_reconstruction_error_is_discarded_eigenvalues():
    X = np.random.default_rng(1).standard_normal((200, 6)) @ np.random.default_rng(2).standard_normal((6, 6))
    r = pca_project(X, 2)
    Z = (X - X.mean(0)) / X.std(0, ddof=1)
    recon = r.coords @ r.components
    err = ((Z - recon) ** 2).sum() / (Z.shape[0] - 1)
    assert err == pytest.approx(r.all_eigenvalues[2:].sum(), rel=1e-9)


def test_split_equal_clusters():
    labels = np.repeat(np.arange(4), 25)
    tr, te = stratified_split(labels, 0.8, seed=0)
    assert [int(np.sum(labels[tr] == c)) for c in range(4)] == [20] * 4
    assert len(te) == 20


def test_split_full_sized_fixture():
    labels = np.random.default_rng(0).choice(4, size=6367, p=[0.1, 0.4, 0.3, 0.2])
    tr, te = stratified_split(labels, 0.8, seed=0)
    assert abs(len(tr) - 5094) <= 1 and abs(len(te) - 1273) <= 1


def test_split_deterministic():
    labels = np.random.default_rng(5).integers(0, 4, 77)
    a = stratified_split(labels, 0.8, seed=9)
    b = stratified_split(labels, 0.8, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@given(st.lists(st.integers(0, 5), min_size=2, max_size=300), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_partitions_and_preserves_proportions(labels, frac, seed):
    labels = np.array(labels)
    tr, te = stratified_split(labels, frac, seed)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(labels.size))
    for c in np.unique(labels):
        size = int(np.sum(labels == c))
        got = int(np.sum(labels[tr] == c))
        if size >= 2:
            assert abs(got - frac * size) <= 1


def test_cluster_report_counts():
    ds, _ = generate_fixture(80, seed=0, max_duration=600)
    X = feature_matrix(ds)
    m = kmeans_fit(X, 4)
    rows = cluster_report(X, m)
    assert sum(r["count"] for r in rows) == 80
