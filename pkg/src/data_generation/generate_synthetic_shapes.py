"""
Generate the source-domain dataset: generic geometric figures, unrelated
to containers, at the target resolution.

Each image shows one of ten shapes (circle, square, triangle, ...) with
random rotation, size, position, fill texture and background. Labels are
assigned round-robin, so class counts differ by at most one.
"""

from __future__ import annotations

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.config.model_config import IMAGE_SIZE, SOURCE_NUM_CLASSES, SOURCE_TO_TARGET_MIN_RATIO
from src.data_generation.render import BACKGROUND_KINDS, background
from src.datasets import Dataset, DatasetRole, ImageSample, SampleMeta
from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

ShapeFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _radius(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.sqrt(u**2 + v**2)


SOURCE_SHAPES: Dict[str, ShapeFn] = {
    "circle": lambda u, v: _radius(u, v) <= 0.9,
    "square": lambda u, v: np.maximum(np.abs(u), np.abs(v)) <= 0.75,
    "triangle": lambda u, v: (v >= -0.55) & (v <= 0.95 - 1.73 * np.abs(u)),
    "cross": lambda u, v: ((np.abs(u) <= 0.28) & (np.abs(v) <= 0.9)) | ((np.abs(v) <= 0.28) & (np.abs(u) <= 0.9)),
    "ring": lambda u, v: (_radius(u, v) >= 0.55) & (_radius(u, v) <= 0.95),
    "star": lambda u, v: _radius(u, v) <= 0.45 + 0.5 * np.abs(np.cos(2.5 * np.arctan2(v, u))),
    "diamond": lambda u, v: np.abs(u) + np.abs(v) <= 0.95,
    "hexagon": lambda u, v: np.maximum(0.866 * np.abs(u) + 0.5 * np.abs(v), np.abs(v)) <= 0.85,
    "crescent": lambda u, v: (_radius(u, v) <= 0.9) & (_radius(u - 0.45, v) > 0.7),
    "bar": lambda u, v: (np.abs(u) <= 0.95) & (np.abs(v) <= 0.3),
}


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Fill colour field for the figure: solid, striped or checkered."""
    color = rng.uniform(0.0, 1.0, size=3)
    kind = int(rng.integers(0, 3))
    if kind == 0:
        return np.broadcast_to(color, (size, size, 3)).copy()
    other = np.clip(color + rng.uniform(-0.4, 0.4, size=3), 0.0, 1.0)
    period = int(rng.integers(2, 6))
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == 1:
        pattern = (yy // period) % 2 == 0
    else:
        pattern = ((yy // period) + (xx // period)) % 2 == 0
    return np.where(pattern[..., None], color, other)


def render_shape(shape: str, seed: int, size: int = IMAGE_SIZE) -> Tuple[np.ndarray, int]:
    """(uint8 size x size x 3 image, background id) for one shape sample."""
    rng = np.random.default_rng(seed)
    bg_id = int(rng.integers(0, len(BACKGROUND_KINDS)))
    img = background(bg_id, size, rng)

    angle = rng.uniform(0.0, 2 * np.pi)
    scale = rng.uniform(0.22, 0.4) * size
    cy, cx = size / 2.0 + rng.uniform(-0.12, 0.12, size=2) * size
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = (yy - cy) / scale, (xx - cx) / scale
    u = np.cos(angle) * dx + np.sin(angle) * dy
    v = -np.sin(angle) * dx + np.cos(angle) * dy
    mask = SOURCE_SHAPES[shape](u, v)

    fill = _texture(rng, size)
    img[mask] = fill[mask]
    img = np.clip(img + rng.normal(0.0, 0.01, size=img.shape), 0.0, 1.0)
    return np.round(img * 255.0).astype(np.uint8), bg_id


def generate_source_dataset(
    num_classes: int = SOURCE_NUM_CLASSES,
    size: int = 20000,
    seed: int = 0,
    image_size: int = IMAGE_SIZE,
    target_train_size: Optional[int] = None,
    progress: bool = False,
) -> Dataset:
    """
    Render ``size`` shape images; sample i has label i mod ``num_classes``.

    Raises:
        ConfigurationError: ``num_classes`` outside [2, 10], or ``size`` below
            10x ``target_train_size`` when the latter is given.
    """
    if not 2 <= num_classes <= len(SOURCE_SHAPES):
        raise ConfigurationError(f"num_classes must be in [2, {len(SOURCE_SHAPES)}], got {num_classes}")
    if size < num_classes:
        raise ConfigurationError(f"source size {size} leaves some of the {num_classes} classes empty")
    if target_train_size is not None and size < SOURCE_TO_TARGET_MIN_RATIO * target_train_size:
        raise ConfigurationError(
            f"source size {size} is below {SOURCE_TO_TARGET_MIN_RATIO}x the target train size {target_train_size}"
        )

    names = list(SOURCE_SHAPES)[:num_classes]
    seeds = np.random.SeedSequence(int(seed)).generate_state(size, dtype=np.uint64)
    samples = []
    for i in tqdm(range(size), desc="render source", disable=not progress):
        label = i % num_classes
        pixels, bg_id = render_shape(names[label], int(seeds[i]), image_size)
        meta = SampleMeta(
            container_id=names[label],
            shape_family=names[label],
            transparency=None,
            occluded=False,
            background_id=bg_id,
        )
        samples.append(ImageSample(pixels=pixels, label=label, meta=meta))
    logger.info("Generated %d source images over %d shape classes", size, num_classes)
    return Dataset(samples, DatasetRole.SOURCE, "source", num_classes)
