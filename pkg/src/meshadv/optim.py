"""Adam with bias correction, shared by victim training and the mesh attack."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState | None, lr: float = 0.01,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update; returns ``(new_params, new_state)``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != np.shape(params):
        raise ValueError(f"gradient shape {grads.shape} does not match parameters {np.shape(params)}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient in Adam step")
    if state is None:
        state = AdamState(np.zeros_like(grads), np.zeros_like(grads))
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


@dataclass
class Adam:
    """Adam over a dict of named arrays."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> dict:
        out = {}
        for name, value in params.items():
            out[name], self.states[name] = adam_step(value, grads[name], self.states.get(name),
                                                     self.lr, self.beta1, self.beta2, self.eps)
        return out
