"""Adam with bias correction and a staircase learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def learning_rate(step: int, base: float = 1e-3, decay: float = 0.9, every: int = 2000) -> float:
    """base * decay ** floor(step / every)"""
    return base * decay ** (step // every)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Update `params` in place and return (params, state)."""
    for k, g in grads.items():
        if np.shape(g) != np.shape(params[k]):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {k} {np.shape(params[k])}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
