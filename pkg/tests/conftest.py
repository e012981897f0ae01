"""Shared fixtures: tiny images, narrow networks and an isolated pretrain cache."""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np
import pytest

from src.data_generation.generate_synthetic_containers import generate_target_dataset
from src.data_generation.generate_synthetic_shapes import generate_source_dataset
from src.datasets import Dataset, DatasetRole, ImageSample, SampleMeta, SplitConfig
from src.ml.cache import CACHE_ENV_VAR
from src.ml.train_models import TrainConfig

TINY_WIDTHS = (2, 2, 4, 4)
TINY_SIZE = 16

RUN_SLOW = os.environ.get("ADVXFER_RUN_SLOW") == "1"


def make_dataset(
    pixels: np.ndarray,
    labels: Sequence[int],
    num_classes: int,
    container_ids: Sequence[str] = (),
    role: DatasetRole = DatasetRole.TARGET_TRAIN,
) -> Dataset:
    """Dataset from an N x H x W x 3 uint8 array."""
    samples = []
    for i, (px, label) in enumerate(zip(pixels, labels)):
        cid = container_ids[i] if container_ids else f"c{int(label)}"
        meta = SampleMeta(container_id=cid, shape_family=cid, transparency=None, occluded=False, background_id=0)
        samples.append(ImageSample(pixels=np.asarray(px, dtype=np.uint8), label=int(label), meta=meta))
    return Dataset(samples, role, "test", num_classes)


def random_dataset(n: int, num_classes: int, size: int = 8, seed: int = 0, **kwargs) -> Dataset:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)
    labels = np.arange(n) % num_classes
    return make_dataset(pixels, labels, num_classes, **kwargs)


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Every test gets its own pretrain cache directory."""
    cache_dir = tmp_path / "cache"
    monkeypatch.setenv(CACHE_ENV_VAR, str(cache_dir))
    return cache_dir


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, lr0=0.05, lr_finetune=0.01, batch_size=8, seed=0)


@pytest.fixture(scope="session")
def tiny_split() -> SplitConfig:
    return SplitConfig.builtin("s1", samples_per_container=4, image_size=TINY_SIZE)


@pytest.fixture(scope="session")
def target_sets(tiny_split):
    return generate_target_dataset(tiny_split, seed=0)


@pytest.fixture(scope="session")
def source_set() -> Dataset:
    return generate_source_dataset(num_classes=4, size=40, seed=0, image_size=TINY_SIZE)
