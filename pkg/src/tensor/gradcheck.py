"""Central-difference gradient checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from src.tensor.tensor import Tensor, backward

MIN_SAMPLED_COORDS = 50


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = 1e-5,
    coords: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for the chosen
    flat coordinates of ``tensor`` (all of them by default). Entries that
    are not sampled are left at zero. ``tensor.data`` is restored afterwards.
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    est = np.zeros(flat.size, dtype=np.float64)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        est[i] = (up - down) / (2.0 * step)
    return est.reshape(tensor.data.shape)


def finite_diff_check(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare the autodiff gradient of a scalar ``fn`` w.r.t. ``tensor`` with
    central differences.

    ``fn`` takes no arguments and rebuilds its graph from the current
    ``tensor.data`` on every call. When ``max_coords`` is smaller than the
    tensor, a seeded random subset of at least 50 coordinates is checked.

    Returns:
        max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|),
        i.e. the worst coordinate error relative to the gradient scale.
        Zero when both gradients vanish.
    """
    was_differentiable = tensor.requires_grad
    tensor.requires_grad = True
    tensor.grad = None
    loss = fn()
    backward(loss, wrt=[tensor])
    analytic = np.zeros(tensor.data.shape) if tensor.grad is None else tensor.grad.astype(np.float64)
    tensor.grad = None
    tensor.requires_grad = was_differentiable

    size = tensor.data.size
    if max_coords is None or max_coords >= size:
        coords = np.arange(size)
    else:
        rng = np.random.default_rng(seed)
        coords = np.sort(rng.choice(size, size=min(size, max(MIN_SAMPLED_COORDS, max_coords)), replace=False))

    numeric = numerical_gradient(fn, tensor, step=step, coords=coords)
    a = analytic.reshape(-1)[coords]
    n = numeric.reshape(-1)[coords]
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)
