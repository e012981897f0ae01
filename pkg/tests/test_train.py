import numpy as np
import pytest

from src.attack import PerturbationBudget
from src.errors import ConfigurationError, DivergenceError
from src.ml.schedule import lr_at
from src.ml.train_models import PhaseRecord, TrainConfig, train
from src.model import build_linear_classifier, build_model, freeze_prefix
from src.tensor import ScalarMode

from tests.conftest import TINY_WIDTHS, make_dataset, random_dataset


def _stripes(n=200, size=4, seed=0):
    """Class 0: dark top half, bright bottom half. Class 1: the reverse."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    pixels = np.empty((n, size, size, 3), dtype=np.uint8)
    for i, y in enumerate(labels):
        top, bottom = (30, 225) if y == 0 else (225, 30)
        img = np.empty((size, size, 3))
        img[: size // 2] = top
        img[size // 2:] = bottom
        img += rng.normal(0.0, 10.0, size=img.shape)
        pixels[i] = np.clip(img, 0, 255).astype(np.uint8)
    return make_dataset(pixels, labels, num_classes=2)


def test_linearly_separable_data_is_learned():
    dataset = _stripes()
    model = build_linear_classifier(4 * 4 * 3, 2, seed=0, mode=ScalarMode.DOUBLE)
    config = TrainConfig(epochs=30, lr0=0.1, batch_size=16, seed=0, precision=ScalarMode.DOUBLE)
    _, record = train(model, dataset, config)
    assert record.final_acc >= 0.99
    assert record.history[-1]["loss"] < record.history[0]["loss"]


def test_record_and_schedule():
    dataset = random_dataset(24, 3)
    model = build_model(TINY_WIDTHS, num_classes=3, seed=0)
    config = TrainConfig(epochs=3, lr0=0.2, batch_size=8, seed=1)
    _, record = train(model, dataset, config, phase="Train", domain="target")
    assert isinstance(record, PhaseRecord)
    assert (record.phase, record.domain, record.adversarial, record.epsilon) == ("Train", "target", False, None)
    assert record.epochs == 3 and len(record.history) == 3
    assert [h["lr"] for h in record.history] == pytest.approx([lr_at(0.2, e, 3) for e in range(3)])
    assert 0.0 <= record.final_acc <= 1.0
    assert record.final_loss == record.history[-1]["loss"]
    assert PhaseRecord.from_dict(record.to_dict()) == record


def test_same_seed_same_parameters():
    dataset = random_dataset(16, 2, seed=3)
    config = TrainConfig(epochs=2, lr0=0.1, batch_size=8, seed=4)
    a, _ = train(build_model(TINY_WIDTHS, num_classes=2, seed=0), dataset, config)
    b, _ = train(build_model(TINY_WIDTHS, num_classes=2, seed=0), dataset, config)
    for name, arr in a.state_dict().items():
        np.testing.assert_array_equal(arr, b.state_dict()[name], err_msg=name)


def test_frozen_backbone_is_untouched():
    dataset = random_dataset(16, 4, seed=2)
    model = freeze_prefix(build_model(TINY_WIDTHS, num_classes=4, seed=0), 4)
    before = model.state_dict()
    train(model, dataset, TrainConfig(epochs=2, lr0=0.1, batch_size=8))
    after = model.state_dict()
    for name in before:
        if name.startswith("head."):
            assert not np.array_equal(before[name], after[name]), name
        else:
            np.testing.assert_array_equal(before[name], after[name], err_msg=name)


def test_adversarial_phase_is_recorded():
    dataset = random_dataset(16, 2, seed=5)
    model = build_model(TINY_WIDTHS, num_classes=2, seed=0)
    budget = PerturbationBudget(epsilon=0.25, iters=2)
    _, record = train(model, dataset, TrainConfig(epochs=1, batch_size=8), adversarial=budget, phase="AT", domain="source")
    assert record.adversarial is True
    assert record.epsilon == 0.25
    assert np.isfinite(record.final_loss)


def test_class_count_mismatch():
    dataset = random_dataset(12, 3)
    with pytest.raises(ConfigurationError):
        train(build_model(TINY_WIDTHS, num_classes=4, seed=0), dataset, TrainConfig(epochs=1))


def test_non_finite_weights_diverge():
    dataset = _stripes(n=16)
    model = build_linear_classifier(4 * 4 * 3, 2, seed=0)
    model.weight.data[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        train(model, dataset, TrainConfig(epochs=1, batch_size=8, precision=ScalarMode.DOUBLE))


@pytest.mark.parametrize(
    "kwargs",
    [{"epochs": 0}, {"lr0": 0.0}, {"lr_finetune": float("nan")}, {"batch_size": 0}, {"momentum": 1.0}],
)
def test_invalid_train_config(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


def test_source_seed_defaults_to_run_seed():
    assert TrainConfig(seed=3).effective_source_seed == 3
    assert TrainConfig(seed=3, source_seed=0).effective_source_seed == 0


def test_zero_radius_adversarial_training_equals_clean_training():
    dataset = random_dataset(16, 2, seed=6)
    config = TrainConfig(epochs=2, lr0=0.1, batch_size=8, seed=2)
    clean, _ = train(build_model(TINY_WIDTHS, num_classes=2, seed=0), dataset, config)
    robust, record = train(
        build_model(TINY_WIDTHS, num_classes=2, seed=0), dataset, config, adversarial=PerturbationBudget(epsilon=0.0)
    )
    assert record.adversarial and record.epsilon == 0.0
    for name, arr in clean.state_dict().items():
        np.testing.assert_array_equal(arr, robust.state_dict()[name], err_msg=name)
