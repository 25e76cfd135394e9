"""Adam with global-norm gradient clipping, over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_update", "clip_by_global_norm"]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kwargs) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **kwargs)


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def adam_update(state: AdamState, params: np.ndarray, grad: np.ndarray,
                lr: float) -> np.ndarray:
    """One bias-corrected Adam step; mutates ``state``, returns new parameters."""
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class OptimizerSettings:
    """Training-loop knobs bundled for configs and checkpoints."""

    lr: float = 1e-4
    clip_norm: float = 10.0
    batch_size: int = 16
    steps: int = 2000
    log_every: int = 200
    extra: dict = field(default_factory=dict)
