"""
Learning-rate schedule and the plain SGD update.
"""

from __future__ import annotations

import logging
from typing import Dict, Mapping, Optional

import numpy as np

from src.errors import ConfigurationError, ContractError, DimensionError, DivergenceError
from src.tensor import Tensor

logger = logging.getLogger(__name__)


def lr_at(lr0: float, epoch: int, epochs: int) -> float:
    """Linear decay lr0 * (1 - e/E), one value per epoch; the last epoch uses lr0/E."""
    if epochs < 1:
        raise ConfigurationError(f"epochs must be >= 1, got {epochs}")
    if not 0 <= epoch < epochs:
        raise ConfigurationError(f"epoch index {epoch} outside [0, {epochs})")
    return lr0 * (1.0 - epoch / epochs)


def sgd_step(
    params: Mapping[str, Tensor],
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.0,
    velocity: Optional[Dict[str, np.ndarray]] = None,
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """
    theta <- theta - lr * g for every tensor in ``params`` that requires a
    gradient and has one. Frozen tensors are skipped even if a gradient
    was written into them.

    ``grads`` maps parameter names to gradients; when omitted each
    tensor's own ``.grad`` is used. An explicit mapping must cover every
    trainable tensor with arrays of matching shape.

    ``weight_decay`` and ``momentum`` default to 0 (plain SGD). With
    momentum, ``velocity`` holds the per-tensor buffers between calls.

    Raises:
        DivergenceError: if any gradient contains NaN or inf; no tensor is
            modified in that case.
    """
    if grads is None:
        active = {name: (t, t.grad) for name, t in params.items() if t.requires_grad and t.grad is not None}
    else:
        active = {}
        for name, t in params.items():
            if not t.requires_grad:
                continue
            if name not in grads:
                raise ContractError(f"no gradient supplied for trainable tensor {name!r}")
            g = np.asarray(grads[name])
            if g.shape != t.data.shape:
                raise DimensionError("sgd_step", f"gradient for {name!r} has shape {g.shape}, tensor has {t.data.shape}")
            active[name] = (t, g)
    for name, (_, g) in active.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in tensor {name!r}")

    for name, (t, g) in active.items():
        if weight_decay:
            g = g + weight_decay * t.data
        if momentum:
            if velocity is None:
                raise ConfigurationError("momentum > 0 needs a velocity buffer dict")
            v = velocity.get(name)
            v = g if v is None else momentum * v + g
            velocity[name] = v
            g = v
        t.data = (t.data - lr * g).astype(t.data.dtype, copy=False)
