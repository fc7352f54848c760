"""Finite-difference verification of autodiff gradients."""
from __future__ import annotations

import numpy as np


def grad_check(loss_fn, params, n_samples=20, h=1e-4, seed=0, kink_tol=1e-2):
    """Max relative error between autodiff and central differences.

    ``loss_fn()`` builds a scalar Tensor from the current values of the
    Tensors in ``params`` (a list or name -> Tensor mapping). Coordinates are
    sampled at random; a coordinate is skipped when the one-sided slopes on
    either side disagree by more than ``kink_tol`` relative, which marks a
    ReLU/abs kink inside the stencil. Returns ``(max_rel_err, n_checked)``.
    """
    items = list(params.items()) if isinstance(params, dict) else list(enumerate(params))
    for _, p in items:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in items}
    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for _, p in items], dtype=float)
    worst, checked = 0.0, 0
    for _ in range(n_samples):
        i = int(rng.choice(len(items), p=sizes / sizes.sum()))
        key, p = items[i]
        flat = p.data.reshape(-1)
        j = int(rng.integers(flat.size))
        orig = flat[j]
        f0 = float(loss_fn().data)
        flat[j] = orig + h
        fp = float(loss_fn().data)
        flat[j] = orig - h
        fm = float(loss_fn().data)
        flat[j] = orig
        right, left = (fp - f0) / h, (f0 - fm) / h
        scale = max(abs(right), abs(left), 1e-8)
        if abs(right - left) / scale > kink_tol and abs(right - left) > 1e-6:
            continue
        num = (fp - fm) / (2 * h)
        ana = analytic[key].reshape(-1)[j]
        denom = max(abs(num), abs(ana), 1e-6)
        worst = max(worst, abs(num - ana) / denom)
        checked += 1
    return worst, checked
