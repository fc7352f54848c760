"""Train a tiny CSDI-mode transformer for a few epochs and sample trips from it.

Small enough to finish in about a minute on a laptop CPU. The samples are
rough (the model barely trains) but every one starts and ends at rest.

    python demos/tiny_diffusion.py
"""
import numpy as np

from microtrip.diffusion import cosine_schedule
from microtrip.fixtures import generate_fixture
from microtrip.metrics import boundary_violation_rate, wasserstein_1d
from microtrip.neural import TrainConfig, TransformerConfig, TransformerDenoiser, train
from microtrip.postgen import GenerationConfig, generate_diffusion, sample_conditions

LENGTH = 128


def main():
    ds, _ = generate_fixture(80, seed=1, max_duration=LENGTH - 1)
    trips = list(ds)
    model = TransformerDenoiser(TransformerConfig(length=LENGTH, d_model=32, n_heads=2, n_layers=1, d_ff=64), seed=0)
    sched = cosine_schedule(50)
    cfg = TrainConfig(epochs=15, batch_size=16, learning_rate=3e-3, physics_min_alpha_bar=0.5, diffusion_steps=50)
    result = train(model, trips, sched, cfg, callback=lambda row: print(f"epoch {row['epoch']:3d}  loss {row['total']:.4f}"))

    gen = GenerationConfig.for_engine("csdi")
    conds, _ = sample_conditions(trips, 0.0, 0.0, 40, np.random.default_rng(0))
    synth = generate_diffusion(model, sched, conds, "csdi", gen, seed=0)
    real_v = np.concatenate([t.speeds for t in trips])
    synth_v = np.concatenate([t.speeds for t in synth])
    print(f"{result.steps} optimiser steps, {len(synth)} samples")
    print(f"boundary violations {boundary_violation_rate(synth):.1f}%")
    print(f"speed W1 vs training data {wasserstein_1d(real_v, synth_v):.3f} m/s")


if __name__ == "__main__":
    main()
