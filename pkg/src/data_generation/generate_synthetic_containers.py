"""
Generate the synthetic target dataset: container images labelled by
filling level, split into train and test by shape family.

Output (when run through the CLI `gen-data`):
    <root>/target-train/<container_id>/<index>.ppm
    <root>/target-test/<container_id>/<index>.ppm
    <root>/manifest.csv

The process is a pure function of (catalog, SplitConfig, seed):

- Every container renders `samples_per_container` images (held-out
  containers `test_samples_per_container`, when set).
- Opaque containers are always labelled unknown. See-through containers
  split their samples over 0% / 50% / 90% in the 40:25:25 proportions of
  CLASS_IMBALANCE, so the classes are deliberately uneven.
- Occlusion (p = 0.5), background kind and per-sample render seed are drawn
  from a stream keyed by (seed, container_id).
"""

from __future__ import annotations

import logging
import zlib
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.config.model_config import (
    CLASS_IMBALANCE,
    CONTAINERS,
    NUM_TARGET_CLASSES,
    ContainerSpec,
    FillLevel,
    Transparency,
    families_in_catalog,
)
from src.data_generation.render import BACKGROUND_KINDS, render_container
from src.datasets import Dataset, DatasetRole, ImageSample, SplitConfig
from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

_SEE_THROUGH_LEVELS = (FillLevel.EMPTY, FillLevel.HALF, FillLevel.NINETY)
OCCLUSION_RATE = 0.5


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------


def _container_rng(seed: int, container_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(container_id.encode("utf-8"))]))


def fill_schedule(transparency: Transparency, n: int, rng: np.random.Generator) -> List[FillLevel]:
    """
    Fill levels for the ``n`` samples of one container.

    Counts follow the imbalance profile by largest remainder (leftover
    samples go to classes drawn in proportion to their remainders), then the
    order is shuffled.
    """
    if transparency is Transparency.OPAQUE:
        return [FillLevel.UNKNOWN] * n
    weights = np.array([CLASS_IMBALANCE[level] for level in _SEE_THROUGH_LEVELS])
    exact = weights / weights.sum() * n
    counts = np.floor(exact).astype(int)
    leftover = n - int(counts.sum())
    if leftover:
        remainders = exact - counts
        extra = rng.choice(len(counts), size=leftover, replace=False, p=remainders / remainders.sum())
        counts[extra] += 1
    levels = np.repeat(np.arange(len(counts)), counts)
    return [_SEE_THROUGH_LEVELS[i] for i in rng.permutation(levels)]


def split_families(split: SplitConfig, catalog: Dict[str, ContainerSpec]) -> Tuple[List[str], List[str]]:
    """(train families, test families) in catalog order; validates the split."""
    families = families_in_catalog(catalog)
    unknown = sorted(set(split.held_out_shapes) - set(families))
    if unknown:
        raise ConfigurationError(f"split {split.split_id!r}: held-out families not in catalog: {unknown}")
    test = [f for f in families if f in split.held_out_shapes]
    train = [f for f in families if f not in split.held_out_shapes]
    if len(train) < 2 or len(test) < 2:
        raise ConfigurationError(
            f"split {split.split_id!r} needs >= 2 shape families per side, got train={train} test={test}"
        )
    return train, test


def render_container_samples(
    spec: ContainerSpec, n: int, seed: int, image_size: int
) -> List[ImageSample]:
    rng = _container_rng(seed, spec.container_id)
    fills = fill_schedule(spec.transparency, n, rng)
    occluded = rng.random(n) < OCCLUSION_RATE
    backgrounds = rng.integers(0, len(BACKGROUND_KINDS), size=n)
    render_seeds = rng.integers(0, 2**32, size=n, dtype=np.uint64)
    return [
        render_container(
            spec,
            fills[i],
            occluded=bool(occluded[i]),
            background_id=int(backgrounds[i]),
            seed=int(render_seeds[i]),
            size=image_size,
        )
        for i in range(n)
    ]


# ---------------------------------------------------------------------
# Main generator
# ---------------------------------------------------------------------


def generate_target_dataset(
    split: SplitConfig,
    seed: int = 0,
    catalog: Optional[Dict[str, ContainerSpec]] = None,
    progress: bool = False,
) -> Tuple[Dataset, Dataset]:
    """
    Render the train and test sets of one shape-held-out split.

    Containers whose shape family is held out go to the test set only, so
    the two sets never share a container_id.

    Raises:
        ConfigurationError: a held-out family is not in the catalog, or one
            side of the split has fewer than two families.
    """
    catalog = CONTAINERS if catalog is None else catalog
    train_fams, test_fams = split_families(split, catalog)
    logger.info("Split %s: train families %s, test families %s", split.split_id, train_fams, test_fams)

    train_samples: List[ImageSample] = []
    test_samples: List[ImageSample] = []
    for cid, spec in tqdm(catalog.items(), desc=f"render {split.split_id}", disable=not progress):
        held_out = spec.shape_family in split.held_out_shapes
        n = split.test_count if held_out else split.samples_per_container
        samples = render_container_samples(spec, n, seed, split.image_size)
        (test_samples if held_out else train_samples).extend(samples)
        logger.debug("Rendered %d samples of %s (%s)", n, cid, "test" if held_out else "train")

    train = Dataset(train_samples, DatasetRole.TARGET_TRAIN, split.split_id, NUM_TARGET_CLASSES)
    test = Dataset(test_samples, DatasetRole.TARGET_TEST, split.split_id, NUM_TARGET_CLASSES)
    logger.info("Generated target split %s: %d train / %d test images", split.split_id, len(train), len(test))
    return train, test
