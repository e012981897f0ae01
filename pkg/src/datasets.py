"""
In-memory image datasets shared by the generators, the trainer and the
harness.

Samples keep their pixels as 8-bit values (the on-disk representation)
and expose a float view in [0, 1]. Batches are converted to NCHW floats of
the model's precision on demand, so a large source set never has to sit in
memory as floats.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config.model_config import (
    BUILTIN_SPLITS,
    IMAGE_SIZE,
    SAMPLES_PER_CONTAINER,
    FillLevel,
    Transparency,
)
from src.errors import ConfigurationError


class DatasetRole(str, Enum):
    SOURCE = "source"
    TARGET_TRAIN = "target-train"
    TARGET_TEST = "target-test"


@dataclass(frozen=True)
class SampleMeta:
    container_id: str
    shape_family: str
    transparency: Optional[Transparency]
    occluded: bool
    background_id: int


@dataclass
class ImageSample:
    """One H x W x C image with its class index and rendering metadata."""

    pixels: np.ndarray
    label: int
    meta: SampleMeta

    @property
    def image(self) -> np.ndarray:
        """Float view with values in [0, 1]."""
        return self.pixels.astype(np.float64) / 255.0

    @property
    def fill_level(self) -> FillLevel:
        return FillLevel(self.label)


@dataclass(frozen=True)
class SplitConfig:
    """Which shape families are held out for testing, and how many samples per container."""

    split_id: str
    held_out_shapes: FrozenSet[str]
    samples_per_container: int = SAMPLES_PER_CONTAINER
    test_samples_per_container: Optional[int] = None
    image_size: int = IMAGE_SIZE

    def __post_init__(self) -> None:
        if self.samples_per_container < 1:
            raise ConfigurationError(f"samples_per_container must be >= 1, got {self.samples_per_container}")
        if self.test_samples_per_container is not None and self.test_samples_per_container < 1:
            raise ConfigurationError("test_samples_per_container must be >= 1")
        if self.image_size < 8:
            raise ConfigurationError(f"image_size must be >= 8, got {self.image_size}")

    @property
    def test_count(self) -> int:
        return self.samples_per_container if self.test_samples_per_container is None else self.test_samples_per_container

    @classmethod
    def builtin(cls, split_id: str, **overrides) -> "SplitConfig":
        key = split_id.lower()
        if key not in BUILTIN_SPLITS:
            raise ConfigurationError(f"unknown split {split_id!r}; built-in splits: {sorted(BUILTIN_SPLITS)}")
        return cls(split_id=key, held_out_shapes=BUILTIN_SPLITS[key], **overrides)


@dataclass
class Dataset:
    samples: List[ImageSample]
    role: DatasetRole
    split_id: str
    num_classes: int
    _pixels: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def container_ids(self) -> List[str]:
        return [s.meta.container_id for s in self.samples]

    @property
    def image_shape(self) -> Sequence[int]:
        return self.samples[0].pixels.shape if self.samples else ()

    def pixels(self) -> np.ndarray:
        """All images stacked as N x H x W x C uint8 (cached)."""
        if self._pixels is None or self._pixels.shape[0] != len(self.samples):
            self._pixels = np.stack([s.pixels for s in self.samples]) if self.samples else np.zeros((0, 0, 0, 0), np.uint8)
        return self._pixels

    def batch(self, indices: np.ndarray, dtype=np.float32) -> np.ndarray:
        """N x C x H x W floats in [0, 1] for the given sample indices."""
        px = self.pixels()[np.asarray(indices, dtype=np.int64)]
        return np.ascontiguousarray((px.astype(dtype) / 255.0).transpose(0, 3, 1, 2))

    def to_arrays(self, dtype=np.float32):
        return self.batch(np.arange(len(self.samples)), dtype=dtype), self.labels

    def container_counts(self) -> pd.Series:
        """Per-container sample counts, in order of first appearance."""
        ids = self.container_ids
        order = list(dict.fromkeys(ids))
        return pd.Series(ids).value_counts().reindex(order).rename("samples")

    def class_counts(self) -> pd.Series:
        counts = np.bincount(self.labels, minlength=self.num_classes)
        return pd.Series(counts, index=range(self.num_classes), name="samples")

    def manifest(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "container_id": self.container_counts().index,
                "samples": self.container_counts().values,
                "role": self.role.value,
                "split_id": self.split_id,
            }
        )

    def fingerprint(self) -> str:
        """SHA-256 over labels and pixels; identifies the data a model was trained on."""
        h = hashlib.sha256()
        h.update(self.labels.tobytes())
        h.update(np.ascontiguousarray(self.pixels()).tobytes())
        return h.hexdigest()
