from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(state: AdamState, params, grad, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam step. Returns (new_params, new_state); inputs are not modified."""
    b1, b2 = betas
    grad = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = np.asarray(params, dtype=float) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)
