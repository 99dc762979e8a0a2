"""Adam on flat parameter vectors."""
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradient


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grads, state, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8, trainable=None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Entries where ``trainable`` is False are left untouched and their moments
    stay zero. A non-finite gradient raises :class:`NonFiniteGradient` and
    leaves ``params`` and ``state`` as they were.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if trainable is not None:
        grads = np.where(trainable, grads, 0.0)
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NonFiniteGradient(f"non-finite gradient in {bad.size} entries (first index {bad[0]})")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    step = lr * m_hat / (np.sqrt(v_hat) + eps)
    if trainable is not None:
        step = np.where(trainable, step, 0.0)
    return params - step, AdamState(m, v, t)
