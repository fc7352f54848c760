from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update applied in place to ``params`` (name -> ndarray).

    Parameters without a gradient entry are left untouched.
    """
    state.step += 1
    b1c = 1.0 - beta1**state.step
    b2c = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)
    return params, state
