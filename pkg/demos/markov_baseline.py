"""Fit the second-order Markov baseline on fixture trips and compare it with held-out data.

    python demos/markov_baseline.py
"""
import numpy as np

from microtrip.analysis import feature_matrix, kmeans_fit, stratified_split
from microtrip.fixtures import generate_fixture
from microtrip.markov import fit_second_order, generate_markov
from microtrip.metrics import full_report


def main():
    ds, _ = generate_fixture(300, seed=0)
    labels = kmeans_fit(feature_matrix(ds), k=4, seed=0).assignments
    train_idx, test_idx = stratified_split(labels, 0.8, seed=0)
    train, test = list(ds.subset(train_idx)), list(ds.subset(test_idx))
    print(f"{len(train)} training trips, {len(test)} held out; cluster sizes {np.bincount(labels).tolist()}")

    model = fit_second_order(train)
    synth = generate_markov(model, [t.duration for t in test], seed=0)
    rep = full_report(test, synth, seed=0, tstr_train=train)
    for name, value in rep.to_dict().items():
        if isinstance(value, float):
            print(f"{name:>24s}  {value:.4f}")


if __name__ == "__main__":
    main()
