"""
Linear classifier on flattened images.

Shares the classifier interface of MicroResNet (forward / parameters /
trainable_parameters / state_dict), so trainers and attacks accept either.
On a linear model the l2 ball maximizer of the loss is known in closed form,
which makes it the reference case for attack checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from src.errors import ConfigurationError
from src.tensor import ScalarMode, Tensor, flatten, linear


@dataclass
class LinearClassifier:
    weight: Tensor
    bias: Tensor
    mode: ScalarMode

    @property
    def num_classes(self) -> int:
        return int(self.weight.shape[0])

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.ndim > 2:
            x = flatten(x)
        return linear(x, self.weight, self.bias)

    __call__ = forward

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield "weight", self.weight
        yield "bias", self.bias

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self.named_parameters() if t.requires_grad}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def zero_grad(self) -> None:
        self.weight.grad = None
        self.bias.grad = None


def build_linear_classifier(
    in_features: int,
    num_classes: int,
    seed: int = 0,
    mode: ScalarMode = ScalarMode.DOUBLE,
    weight: Optional[np.ndarray] = None,
    bias: Optional[np.ndarray] = None,
) -> LinearClassifier:
    """Seeded N(0, 1/in_features) weights unless explicit arrays are given."""
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if weight is None:
        rng = np.random.default_rng(seed)
        weight = rng.standard_normal((num_classes, in_features)) / np.sqrt(in_features)
    if bias is None:
        bias = np.zeros(num_classes)
    return LinearClassifier(
        weight=Tensor(np.asarray(weight, dtype=mode.dtype), requires_grad=True),
        bias=Tensor(np.asarray(bias, dtype=mode.dtype), requires_grad=True),
        mode=mode,
    )
