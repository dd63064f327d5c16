"""Central-difference verification of analytic gradients.

``grad_check`` compares reverse-mode gradients against central finite
differences coordinate by coordinate; it requires float64 parameters since
float32 differencing drowns in rounding noise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor, backward


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    tamper: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``fn`` must be a deterministic scalar-valued closure over ``params``.
    The error metric is ``|analytic - numeric| / max(1, |analytic|)`` taken
    elementwise, maximized over all parameters. ``tamper`` is a test hook
    that may rewrite the analytic gradient of a named parameter before
    comparison (used to prove the harness catches corrupted gradients).
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError("grad_check requires float64 parameters")
        if not p.requires_grad:
            raise ContractError("grad_check parameters must require gradients")
        p.grad = None
    with Tape() as tape:
        loss = fn()
    if loss.data.size != 1:
        raise ContractError(f"grad_check function must return a scalar, got shape {loss.shape}")
    backward(loss, tape)
    worst = 0.0
    for idx, p in enumerate(params):
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        if tamper is not None:
            analytic = tamper(f"param{idx}", analytic)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            f_plus = float(fn().data.reshape(()))
            flat[i] = saved - epsilon
            f_minus = float(fn().data.reshape(()))
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    return worst
