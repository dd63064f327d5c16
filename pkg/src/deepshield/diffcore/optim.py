"""Plain SGD with optional momentum and weight decay.

Defaults (momentum 0, weight decay 0) give the bare update
``w <- w - lr * g``; the momentum buffer follows ``v <- mu * v + g``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ContractError
from .tensor import Tensor


class SgdState:
    """Optimizer hyperparameters plus per-parameter velocity buffers."""

    def __init__(self, learning_rate: float = 0.01, momentum: float = 0.0, weight_decay: float = 0.0):
        if learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
        if momentum < 0:
            raise ConfigError(f"momentum must be >= 0, got {momentum}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._velocity: dict[int, np.ndarray] = {}

    def velocity_for(self, param: Tensor) -> np.ndarray:
        key = id(param)
        buf = self._velocity.get(key)
        if buf is None:
            buf = np.zeros_like(param.data)
            self._velocity[key] = buf
        return buf


def sgd_step(params: list[Tensor], state: SgdState) -> None:
    """Update every parameter in place from its populated gradient."""
    for p in params:
        if p.grad is None:
            raise ContractError("sgd_step: parameter has no gradient")
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        if state.momentum:
            v = state.velocity_for(p)
            v *= state.momentum
            v += g
            g = v
        p.data -= (state.learning_rate * g).astype(p.data.dtype, copy=False)
