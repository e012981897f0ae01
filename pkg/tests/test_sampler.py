from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chisquare

from src.errors import ConfigurationError
from src.ml.sampler import make_balanced_sampler


def test_probabilities_are_inverse_class_frequency():
    labels = np.array([0] * 2 + [1] * 6 + [2] * 12)
    sampler = make_balanced_sampler(labels, seed=0)
    np.testing.assert_allclose(sampler.probabilities[labels == 0], 1 / (3 * 2))
    np.testing.assert_allclose(sampler.probabilities[labels == 1], 1 / (3 * 6))
    np.testing.assert_allclose(sampler.probabilities[labels == 2], 1 / (3 * 12))
    assert sampler.probabilities.sum() == pytest.approx(1.0)


def test_class_masses_are_exactly_one_over_k():
    labels = np.array([0] * 7 + [1] * 3 + [2] * 11 + [3] * 1)
    masses = make_balanced_sampler(labels, seed=0).class_masses()
    assert masses == {c: Fraction(1, 4) for c in range(4)}


def test_draws_are_balanced_across_classes():
    labels = np.array([0] * 10 + [1] * 30 + [2] * 60 + [3] * 300)
    sampler = make_balanced_sampler(labels, seed=123)
    drawn = labels[sampler.draw(40000)]
    observed = np.bincount(drawn, minlength=4)
    _, p_value = chisquare(observed)
    assert p_value > 1e-3


def test_draws_are_seeded():
    labels = np.arange(50) % 5
    a = make_balanced_sampler(labels, seed=np.random.SeedSequence([3, 0])).draw(64)
    b = make_balanced_sampler(labels, seed=np.random.SeedSequence([3, 0])).draw(64)
    np.testing.assert_array_equal(a, b)
    c = make_balanced_sampler(labels, seed=np.random.SeedSequence([4, 0])).draw(64)
    assert not np.array_equal(a, c)


def test_declared_class_without_samples():
    with pytest.raises(ConfigurationError, match="no training samples"):
        make_balanced_sampler(np.array([0, 0, 2, 2]), seed=0, num_classes=3)


def test_label_outside_declared_classes():
    with pytest.raises(ConfigurationError):
        make_balanced_sampler(np.array([0, 1, 4]), seed=0, num_classes=4)


def test_empty_labels():
    with pytest.raises(ConfigurationError):
        make_balanced_sampler(np.array([], dtype=np.int64), seed=0)


def test_skewed_counts_are_drawn_evenly():
    labels = np.array([0] * 10 + [1] * 30 + [2] * 60)
    drawn = labels[make_balanced_sampler(labels, seed=7).draw(100_000)]
    freqs = np.bincount(drawn, minlength=3) / drawn.size
    np.testing.assert_allclose(freqs, 1 / 3, atol=0.01)
