"""Denoiser training loop with condition dropout.

Two modes share the loop:

* ``"unet"``: two-channel (speed, acceleration) windows, 2-entry conditions,
  objective ``L_simple`` only.
* ``"csdi"``: one-channel speed windows, 4-entry conditions, objective
  ``L_simple`` plus the weighted kinematic penalties evaluated on the
  closed-form clean-speed estimate.

Boundary and pad positions are treated as observed: they are held at zero
in ``x_t`` (as the sampler does) and excluded from the noise loss.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..diffusion import SPEED_SCALE, ConditionVector, NoiseSchedule, constraint_mask, forward_sample, trip_to_state
from .autodiff import Tensor, where
from .losses import PhysicsWeights, loss_csdi, loss_simple
from .optim import AdamState, adam_step


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    cond_dropout: float = 0.1
    weights: PhysicsWeights = field(default_factory=PhysicsWeights)
    physics_min_alpha_bar: float = 0.0
    schedule: str = "cosine"
    diffusion_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = PhysicsWeights(**self.weights)
        if not 0 <= self.cond_dropout <= 1:
            raise ValueError("cond_dropout must be a probability")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        return asdict(self)


def mode_channels(mode):
    return {"unet": 2, "csdi": 1}[mode]


def prepare_arrays(trips, mode, length):
    """Stack normalised states, valid counts and condition vectors."""
    ch = mode_channels(mode)
    X, nv, C = [], [], []
    for trip in trips:
        x, n = trip_to_state(trip, ch, length)
        X.append(x)
        nv.append(n)
        C.append(ConditionVector.from_trip(trip, mode).values)
    return np.stack(X), np.array(nv), np.stack(C)


def batch_loss(model, x0, n_valid, cond, t, eps, drop, sched: NoiseSchedule, mode, cfg: TrainConfig):
    """Objective for one batch; returns ``(total, parts)`` Tensors."""
    B, C, L = x0.shape
    M = constraint_mask(n_valid, C, L)
    x_t = np.where(M, 0.0, forward_sample(x0, t, eps, sched))
    eps_hat = model(x_t, t, cond, drop)
    mse_mask = ~M
    if mode == "unet":
        mse = loss_simple(eps, eps_hat, mse_mask)
        return mse, {"mse": mse}
    ab = sched.alpha_bar[t].reshape(B, 1)
    speed_hat = eps_hat[:, 0, :]
    x0_hat = (Tensor(x_t[:, 0, :]) - speed_hat * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))
    v0_hat = where(M[:, 0, :], 0.0, x0_hat * SPEED_SCALE)
    valid = np.arange(L)[None, :] < n_valid[:, None]
    # penalties only on steps whose clean estimate is well conditioned
    use = sched.alpha_bar[t] >= cfg.physics_min_alpha_bar
    valid = valid & use[:, None]
    return loss_csdi(eps, eps_hat, v0_hat, cfg.weights, mse_mask, valid)


@dataclass
class TrainResult:
    history: list
    config: TrainConfig
    steps: int


def train(model, trips, sched: NoiseSchedule, cfg: TrainConfig, mode="csdi", callback=None) -> TrainResult:
    """Fit ``model`` in place; one history row (mean losses) per epoch.

    Batches come from a seeded permutation each epoch; when the dataset is
    smaller than ``batch_size`` the batch is filled by tiling it, each copy
    drawing its own step and noise.
    """
    trips = list(trips)
    if not trips:
        raise TrainingError("empty training set")
    length = model.config.length
    X, NV, COND = prepare_arrays(trips, mode, length)
    rng = np.random.default_rng(cfg.seed)
    params = dict(model.named_parameters())
    arrays = {k: p.data for k, p in params.items()}
    state = AdamState()
    n = len(trips)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        if n < cfg.batch_size:
            order = np.resize(order, cfg.batch_size)
        sums: dict[str, float] = {}
        n_batches = 0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            B = idx.size
            t = rng.integers(1, sched.T + 1, size=B)
            eps = rng.standard_normal(X[idx].shape)
            drop = rng.random(B) < cfg.cond_dropout
            model.zero_grad()
            total, parts = batch_loss(model, X[idx], NV[idx], COND[idx], t, eps, drop, sched, mode, cfg)
            val = float(total.data)
            if not math.isfinite(val):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {n_batches}")
            total.backward()
            grads = {k: p.grad for k, p in params.items()}
            adam_step(arrays, grads, state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            step += 1
            sums["total"] = sums.get("total", 0.0) + val
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.data)
            n_batches += 1
        row = {"epoch": epoch + 1, **{k: v / n_batches for k, v in sums.items()}}
        history.append(row)
        if callback is not None:
            callback(row)
    return TrainResult(history, cfg, step)


def evaluate_components(model, trips, sched, cfg: TrainConfig, mode="csdi", n_draws=4, seed=1234):
    """Mean unweighted loss components over fixed (t, noise) draws."""
    X, NV, COND = prepare_arrays(list(trips), mode, model.config.length)
    rng = np.random.default_rng(seed)
    acc: dict[str, float] = {}
    from .autodiff import no_grad

    with no_grad():
        for _ in range(n_draws):
            t = rng.integers(1, sched.T + 1, size=len(X))
            eps = rng.standard_normal(X.shape)
            drop = np.zeros(len(X), bool)
            _, parts = batch_loss(model, X, NV, COND, t, eps, drop, sched, mode, cfg)
            for k, v in parts.items():
                acc[k] = acc.get(k, 0.0) + float(v.data) / n_draws
    return acc


def history_csv(history) -> str:
    keys = list(history[0].keys()) if history else ["epoch"]
    lines = [",".join(keys)]
    for row in history:
        lines.append(",".join(repr(row.get(k)) if isinstance(row.get(k), float) else str(row.get(k)) for k in keys))
    return "\n".join(lines) + "\n"
