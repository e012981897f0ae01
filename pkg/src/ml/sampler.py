"""
Class-balanced sampling with probabilities inversely proportional to
class frequency.

Every sample i of class c gets p_i = 1 / (K * count(c)), so each class
carries total mass 1/K. Draws are with replacement from a seeded stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Optional, Sequence, Union

import numpy as np

from src.errors import ConfigurationError


@dataclass
class BalancedSampler:
    labels: np.ndarray
    probabilities: np.ndarray
    counts: np.ndarray
    rng: np.random.Generator

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    def class_masses(self) -> Dict[int, Fraction]:
        """Exact per-class probability mass, computed in rational arithmetic."""
        masses: Dict[int, Fraction] = {}
        k = self.num_classes
        for c, n in enumerate(self.counts):
            masses[c] = int(n) * Fraction(1, k * int(n))
        return masses

    def draw(self, n: int) -> np.ndarray:
        """``n`` sample indices drawn with replacement."""
        return self.rng.choice(self.labels.shape[0], size=int(n), replace=True, p=self.probabilities)


def make_balanced_sampler(
    labels: Sequence[int],
    seed: Union[int, np.random.SeedSequence],
    num_classes: Optional[int] = None,
) -> BalancedSampler:
    """
    Build the inverse-frequency sampler for a label list.

    ``num_classes`` declares the label space; a class with no sample in
    ``labels`` is a configuration error since its 1/K share could never be
    drawn.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigurationError("cannot sample from an empty label set")
    if labels.min() < 0:
        raise ConfigurationError(f"negative class index {labels.min()}")
    k = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    if labels.max() >= k:
        raise ConfigurationError(f"label {labels.max()} outside declared {k} classes")
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ConfigurationError(f"classes with no training samples: {empty.tolist()}")

    probabilities = 1.0 / (k * counts[labels].astype(np.float64))
    # float rounding can leave the sum a few ulps off 1; rng.choice checks it
    probabilities /= probabilities.sum()
    return BalancedSampler(
        labels=labels,
        probabilities=probabilities,
        counts=counts,
        rng=np.random.default_rng(seed),
    )
