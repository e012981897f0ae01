"""
Projected gradient ascent on the classification loss inside an lp ball.

For an image batch x in [0, 1] the attack searches

    max_delta  L(x + delta, y | theta)
    s.t.       ||delta||_p <= epsilon,   x + delta in [0, 1]

with p in {2, inf}. Each iterate takes a normalized ascent step
(step * g / ||g||_2 for l2, step * sign(g) for linf), is projected back onto
the ball and clamped to the pixel box. Because x itself lies in the box,
clamping only shrinks |delta| coordinate-wise, so the ball constraint
survives it.

Gradients are taken with the model in eval mode; the model's parameters,
gradients and batchnorm statistics are never modified.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Union

import numpy as np

from src.config.model_config import PGD_ITERS, PGD_NORM, PGD_STEP_FACTOR
from src.errors import ConfigurationError, ContractError
from src.tensor import Tensor, backward, per_sample_cross_entropy, softmax_cross_entropy

logger = logging.getLogger(__name__)

_INITS = ("zero", "random")
_RETURN_MODES = ("last", "best")


@dataclass(frozen=True)
class PerturbationBudget:
    """
    Attack settings: norm order, radius, iteration count and step size.

    ``step`` defaults to 2.5 * epsilon / iters. ``return_mode="best"`` keeps,
    per sample, the highest-loss point seen (the clean point included);
    ``"last"`` returns the final iterate.
    """

    epsilon: float
    p: float = PGD_NORM
    iters: int = PGD_ITERS
    step: Optional[float] = None
    init: str = "random"
    return_mode: str = "last"

    def __post_init__(self) -> None:
        if self.p not in (2, 2.0, math.inf):
            raise ConfigurationError(f"norm order p must be 2 or inf, got {self.p}")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ConfigurationError(f"epsilon must be a finite value >= 0, got {self.epsilon}")
        if self.iters < 1:
            raise ConfigurationError(f"iters must be >= 1, got {self.iters}")
        if self.step is not None and not self.step > 0:
            raise ConfigurationError(f"step must be > 0, got {self.step}")
        if self.init not in _INITS:
            raise ConfigurationError(f"init must be one of {_INITS}, got {self.init!r}")
        if self.return_mode not in _RETURN_MODES:
            raise ConfigurationError(f"return_mode must be one of {_RETURN_MODES}, got {self.return_mode!r}")

    @property
    def step_size(self) -> float:
        return self.step if self.step is not None else PGD_STEP_FACTOR * self.epsilon / self.iters

    def describe(self) -> Dict[str, Any]:
        record = asdict(self)
        record["p"] = "inf" if self.p == math.inf else int(self.p)
        record["step"] = self.step_size
        return record


def _per_sample_norm(arr: np.ndarray, p: float) -> np.ndarray:
    flat = arr.reshape(arr.shape[0], -1)
    if p == math.inf:
        return np.abs(flat).max(axis=1)
    return np.sqrt((flat.astype(np.float64) ** 2).sum(axis=1))


def _expand(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def project_ball(delta: Union[np.ndarray, Tensor], p: float, epsilon: float) -> Union[np.ndarray, Tensor]:
    """
    Project each sample (axis 0 is the batch) onto {||d||_p <= epsilon}.

    l2 scales points outside the ball radially; linf clips coordinates.
    Samples already inside are returned unchanged.
    """
    if isinstance(delta, Tensor):
        return Tensor(project_ball(delta.data, p, epsilon))
    delta = np.asarray(delta)
    if p == math.inf:
        return np.clip(delta, -epsilon, epsilon)
    if p not in (2, 2.0):
        raise ConfigurationError(f"norm order p must be 2 or inf, got {p}")
    norms = _per_sample_norm(delta, 2.0)
    outside = norms > epsilon
    if not outside.any():
        return delta.copy()
    factor = np.ones_like(norms)
    factor[outside] = epsilon / norms[outside]
    out = delta.copy()
    out[outside] = (delta[outside] * _expand(factor[outside], delta[outside])).astype(delta.dtype)
    return out


def _random_init(rng: np.random.Generator, shape: tuple, budget: PerturbationBudget) -> np.ndarray:
    if budget.p == math.inf:
        return rng.uniform(-budget.epsilon, budget.epsilon, size=shape)
    direction = rng.standard_normal(shape)
    norms = _per_sample_norm(direction, 2.0)
    norms[norms == 0] = 1.0
    dim = int(np.prod(shape[1:]))
    radius = budget.epsilon * rng.uniform(0.0, 1.0, size=shape[0]) ** (1.0 / dim)
    return direction * _expand(radius / norms, direction)


def _ascent_step(grad: np.ndarray, budget: PerturbationBudget) -> np.ndarray:
    step = budget.step_size
    if budget.p == math.inf:
        return step * np.sign(grad)
    norms = _per_sample_norm(grad, 2.0)
    moving = norms > 0
    out = np.zeros_like(grad)
    # zero gradient: that sample keeps its delta for this step
    out[moving] = step * grad[moving] / _expand(norms[moving], grad[moving])
    return out


def pgd_perturb(
    model: Any,
    x: np.ndarray,
    labels: np.ndarray,
    budget: PerturbationBudget,
    seed: int = 0,
) -> np.ndarray:
    """
    Craft x_adv for a batch.

    Args:
        model: classifier exposing ``forward(Tensor, training=False)`` and ``mode``.
        x: N x C x H x W images with values in [0, 1].
        labels: N class indices.
        budget: norm, radius, iterations, step, init and return mode.
        seed: seeds the random start inside the ball.

    Returns:
        Array of the model's precision with ||x_adv - x||_p <= epsilon and
        0 <= x_adv <= 1. With epsilon = 0 this is an exact copy of x.
    """
    x = np.asarray(x, dtype=model.mode.dtype)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ContractError("pgd_perturb: input pixels must lie in [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    if budget.epsilon == 0:
        return x.copy()

    rng = np.random.default_rng(seed)
    if budget.init == "random":
        delta = _random_init(rng, x.shape, budget).astype(x.dtype)
    else:
        delta = np.zeros_like(x)
    x_adv = np.clip(x + delta, 0.0, 1.0)

    track_best = budget.return_mode == "best"
    if track_best:
        best_x = x.copy()
        best_loss = per_sample_cross_entropy(model.forward(Tensor(x), training=False).data, labels)

    for _ in range(budget.iters):
        xt = Tensor(x_adv, requires_grad=True)
        logits = model.forward(xt, training=False)
        if track_best:
            current = per_sample_cross_entropy(logits.data, labels)
            better = current > best_loss
            best_x[better], best_loss[better] = x_adv[better], current[better]
        backward(softmax_cross_entropy(logits, labels), wrt=[xt])
        delta = (x_adv - x) + _ascent_step(xt.grad, budget).astype(x.dtype)
        delta = project_ball(delta, budget.p, budget.epsilon)
        x_adv = np.clip(x + delta, 0.0, 1.0)

    if track_best:
        current = per_sample_cross_entropy(model.forward(Tensor(x_adv), training=False).data, labels)
        better = current > best_loss
        best_x[better] = x_adv[better]
        x_adv = best_x

    logger.debug(
        "PGD p=%s eps=%g iters=%d step=%g on %d images",
        budget.p, budget.epsilon, budget.iters, budget.step_size, x.shape[0],
    )
    return x_adv


def adversarial_loss(
    model: Any,
    x: np.ndarray,
    labels: np.ndarray,
    budget: PerturbationBudget,
    seed: int = 0,
    training: bool = False,
) -> Tensor:
    """
    L(x + delta*, y | theta) with delta* from `pgd_perturb`.

    delta* enters as a constant, so backward on the result reaches the
    parameters through the loss at the perturbed point only. ``training``
    selects the batchnorm mode of this final forward pass.
    """
    x_adv = pgd_perturb(model, x, labels, budget, seed=seed)
    logits = model.forward(Tensor(x_adv), training=training)
    return softmax_cross_entropy(logits, labels)
