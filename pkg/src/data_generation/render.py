"""
Procedural renderer for container images.

A container is drawn from its profile: a list of (h, r) knots giving the
interior half-width r (fraction of the image width) at relative height h
(0 = interior bottom, 1 = rim). The interior, walls, base, stem and foot
become boolean masks; liquid fills the interior from the bottom up with an
exact pixel count, so the liquid-to-interior area ratio equals the
nominal fill fraction up to one pixel.

This file defines:
- Profile validation and the mask builder (`container_masks`)
- Backgrounds shared with the source-shape generator
- The occlusion band standing in for a hand holding the container
- `render_container`, which composes everything into an ImageSample
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.config.model_config import IMAGE_SIZE, ContainerSpec, FillLevel, Profile, Transparency
from src.datasets import ImageSample, SampleMeta
from src.errors import GenerationError

BACKGROUND_KINDS: Tuple[str, ...] = ("flat", "gradient", "stripes", "blotches")
CONTENT_LOOKS: Tuple[str, ...] = ("water", "rice", "pasta")

OCCLUSION_COVERAGE = (0.20, 0.40)
# band rows are added whole, so the drawn target stays below the upper
# bound by more than one row's share of the container
_OCCLUSION_TARGET = (0.20, 0.33)

_HAND_RGB = np.array([0.86, 0.66, 0.53])


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def validate_profile(profile: Profile) -> None:
    if len(profile) < 2:
        raise GenerationError(f"profile needs at least two knots, got {len(profile)}")
    hs = np.array([h for h, _ in profile], dtype=float)
    rs = np.array([r for _, r in profile], dtype=float)
    if not (np.all(np.isfinite(hs)) and np.all(np.isfinite(rs))):
        raise GenerationError("profile knots must be finite")
    if hs[0] != 0.0 or hs[-1] != 1.0 or np.any(np.diff(hs) <= 0):
        raise GenerationError("profile heights must rise strictly from 0 to 1")
    if np.any(rs < 0):
        raise GenerationError("profile radii must be >= 0")
    if not np.any(rs > 0):
        raise GenerationError("degenerate profile: zero interior width everywhere")


def radius_at(profile: Profile, h: np.ndarray) -> np.ndarray:
    return np.interp(h, [k[0] for k in profile], [k[1] for k in profile])


@dataclass(frozen=True)
class ContainerLayout:
    """Placement jitter of one rendering: size scale, horizontal centre, bottom row."""

    scale: float
    center_x: float
    bottom: int

    @classmethod
    def centered(cls, size: int) -> "ContainerLayout":
        return cls(scale=1.0, center_x=size / 2.0, bottom=size - 1 - round(0.05 * size))

    @classmethod
    def draw(cls, rng: np.random.Generator, size: int) -> "ContainerLayout":
        return cls(
            scale=float(rng.uniform(0.88, 1.0)),
            center_x=size / 2.0 + float(rng.uniform(-0.06, 0.06)) * size,
            bottom=size - 1 - round(0.05 * size) - int(rng.integers(0, 2)),
        )


@dataclass
class ContainerMasks:
    interior: np.ndarray
    liquid: np.ndarray
    body: np.ndarray

    @property
    def container(self) -> np.ndarray:
        return self.interior | self.body

    @property
    def liquid_fraction(self) -> float:
        return float(self.liquid.sum()) / float(self.interior.sum())


def container_masks(
    spec: ContainerSpec,
    fill_fraction: float,
    size: int = IMAGE_SIZE,
    layout: Optional[ContainerLayout] = None,
) -> ContainerMasks:
    """
    Boolean masks of one container.

    The liquid is the first round(f * |interior|) interior pixels taken
    bottom row first, each row from the centre outwards.

    Raises:
        GenerationError: invalid profile, or a container too small to have
            any interior pixel at this image size.
    """
    validate_profile(spec.profile)
    if not 0.0 <= fill_fraction <= 1.0:
        raise GenerationError(f"fill fraction must be in [0, 1], got {fill_fraction}")
    layout = layout or ContainerLayout.centered(size)
    px = size * layout.scale
    wall = max(1.0, size / 48.0)

    total_h = min(max(4, round(spec.height * px)), layout.bottom + 1)
    stem_h = round(spec.stem * total_h)
    base_h = max(1, round(size / 48.0))
    interior_bottom = layout.bottom - stem_h - base_h
    top = layout.bottom - total_h + 1
    n_rows = interior_bottom - top + 1
    if n_rows < 2:
        raise GenerationError(f"container {spec.container_id!r} has no interior rows at size {size}")

    ys = np.arange(size)[:, None]
    dx = np.abs(np.arange(size)[None, :] + 0.5 - layout.center_x)

    rel_h = np.full(size, np.nan)
    rows = np.arange(top, interior_bottom + 1)
    rel_h[rows] = (interior_bottom - rows) / (n_rows - 1)
    r_px = np.where(np.isnan(rel_h), -1.0, radius_at(spec.profile, np.nan_to_num(rel_h)) * px)[:, None]

    in_bowl = (ys >= top) & (ys <= interior_bottom)
    interior = in_bowl & (dx <= r_px)
    body = in_bowl & (dx <= r_px + wall) & ~interior

    r_bottom = radius_at(spec.profile, np.array([0.0]))[0] * px
    base_rows = (ys > interior_bottom) & (ys <= interior_bottom + base_h)
    body |= base_rows & (dx <= r_bottom + wall)

    if stem_h > 0:
        foot_h = max(1, round(size / 40.0))
        r_max = max(r for _, r in spec.profile) * px
        stem_rows = (ys > interior_bottom + base_h) & (ys <= layout.bottom - foot_h)
        foot_rows = (ys > layout.bottom - foot_h) & (ys <= layout.bottom)
        body |= stem_rows & (dx <= max(0.75, size / 64.0))
        body |= foot_rows & (dx <= 0.8 * r_max)

    if not interior.any():
        raise GenerationError(f"container {spec.container_id!r}: degenerate profile, zero interior")

    coords = np.argwhere(interior)
    center_dist = np.abs(coords[:, 1] + 0.5 - layout.center_x)
    order = np.lexsort((coords[:, 1], center_dist, -coords[:, 0]))
    n_liquid = int(round(fill_fraction * len(coords)))
    liquid = np.zeros_like(interior)
    chosen = coords[order[:n_liquid]]
    liquid[chosen[:, 0], chosen[:, 1]] = True
    return ContainerMasks(interior=interior, liquid=liquid, body=body)


# ---------------------------------------------------------------------------
# Backgrounds and occlusion
# ---------------------------------------------------------------------------

def background(background_id: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """size x size x 3 float image for one of the four background kinds."""
    if not 0 <= background_id < len(BACKGROUND_KINDS):
        raise GenerationError(f"background_id must be in [0, {len(BACKGROUND_KINDS)}), got {background_id}")
    kind = BACKGROUND_KINDS[background_id]
    base = rng.uniform(0.2, 0.8, size=3)
    if kind == "flat":
        img = np.broadcast_to(base, (size, size, 3)).copy()
    elif kind == "gradient":
        other = rng.uniform(0.2, 0.8, size=3)
        t = np.linspace(0.0, 1.0, size)[:, None, None]
        img = np.broadcast_to((1 - t) * base + t * other, (size, size, 3)).copy()
    elif kind == "stripes":
        other = np.clip(base + rng.uniform(-0.25, 0.25, size=3), 0.0, 1.0)
        period = int(rng.integers(4, 11))
        yy, xx = np.mgrid[0:size, 0:size]
        axis = int(rng.integers(0, 3))
        coord = (yy, xx, yy + xx)[axis]
        img = np.where(((coord // period) % 2 == 0)[..., None], base, other)
    else:
        cells = max(2, size // 8)
        grid = rng.uniform(0.2, 0.8, size=(cells, cells, 3))
        reps = math.ceil(size / cells)
        img = np.repeat(np.repeat(grid, reps, axis=0), reps, axis=1)[:size, :size]
        img = 0.5 * img + 0.5 * base
    # table surface under the objects
    table = round(0.85 * size)
    img[table:] *= 0.8
    return img


def occlusion_band(
    container: np.ndarray,
    rng: np.random.Generator,
    coverage: Tuple[float, float] = _OCCLUSION_TARGET,
) -> np.ndarray:
    """
    Horizontal band of whole rows across the container, grown from a random
    start row until it covers at least the drawn share of container pixels.
    """
    row_counts = container.sum(axis=1)
    total = int(row_counts.sum())
    rows = np.flatnonzero(row_counts)
    if total == 0:
        return np.zeros_like(container)
    target = rng.uniform(*coverage) * total
    start = int(rng.choice(rows))
    chosen, covered = [], 0
    y = start
    while covered < target and y <= rows[-1]:
        chosen.append(y)
        covered += int(row_counts[y])
        y += 1
    y = start - 1
    while covered < target and y >= rows[0]:
        chosen.append(y)
        covered += int(row_counts[y])
        y -= 1
    cols = np.flatnonzero(container.any(axis=0))
    band = np.zeros_like(container)
    x0, x1 = max(0, cols[0] - 2), min(container.shape[1], cols[-1] + 3)
    band[np.array(chosen)[:, None], np.arange(x0, x1)[None, :]] = True
    return band


def _paint_hand(img: np.ndarray, band: np.ndarray, rng: np.random.Generator) -> None:
    skin = np.clip(_HAND_RGB + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
    rows = np.flatnonzero(band.any(axis=1))
    shade = np.ones(img.shape[0])
    # darker seams between fingers
    shade[rows[(rows - rows[0]) % 4 == 3]] = 0.8
    row_shade = np.broadcast_to(shade[:, None], band.shape)[band]
    img[band] = row_shade[:, None] * skin[None, :]


# ---------------------------------------------------------------------------
# Content looks
# ---------------------------------------------------------------------------

def _content_colors(look: str, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """Per-pixel content colour and its opacity."""
    if look == "water":
        base = np.array([0.55, 0.75, 0.95])
        return np.broadcast_to(base, (n, 3)) + rng.normal(0.0, 0.01, size=(n, 3)), 0.6
    if look == "rice":
        base = np.array([0.92, 0.89, 0.80])
        return base + rng.normal(0.0, 0.06, size=(n, 3)), 0.95
    base = np.array([0.93, 0.78, 0.38])
    colors = base + rng.normal(0.0, 0.05, size=(n, 3))
    spots = rng.random(n) < 0.15
    colors[spots] *= 0.7
    return colors, 0.95


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def render_masks(spec: ContainerSpec, fill: FillLevel, seed: int, size: int = IMAGE_SIZE) -> ContainerMasks:
    """The masks `render_container` uses for the same (spec, fill, seed, size)."""
    layout = ContainerLayout.draw(np.random.default_rng(seed), size)
    return container_masks(spec, fill.fraction or 0.0, size, layout)


def render_container(
    spec: ContainerSpec,
    fill: FillLevel,
    transparency: Optional[Transparency] = None,
    occluded: bool = False,
    background_id: int = 0,
    seed: int = 0,
    size: int = IMAGE_SIZE,
) -> ImageSample:
    """
    Render one container image.

    Opaque containers hide their interior and are labelled unknown whatever
    ``fill`` says. See-through containers need a concrete fill level. The
    same arguments always give the same pixels.

    Raises:
        GenerationError: degenerate profile, unknown fill on a see-through
            container, or an out-of-range background id.
    """
    transparency = spec.transparency if transparency is None else transparency
    opaque = transparency is Transparency.OPAQUE
    if not opaque and fill is FillLevel.UNKNOWN:
        raise GenerationError(f"{transparency.value} container {spec.container_id!r} needs a concrete fill level")
    label = FillLevel.UNKNOWN if opaque else fill

    rng = np.random.default_rng(seed)
    layout = ContainerLayout.draw(rng, size)
    masks = container_masks(spec, 0.0 if opaque else fill.fraction, size, layout)
    img = background(background_id, size, rng)
    tint = np.asarray(spec.tint, dtype=float)

    if opaque:
        container = masks.container
        cols = np.arange(size) + 0.5
        half = max(1.0, float(np.abs(cols[container.any(axis=0)] - layout.center_x).max()))
        shading = 0.7 + 0.3 * np.cos(np.clip(np.abs(cols - layout.center_x) / half, 0, 1) * np.pi / 2)
        painted = tint[None, None, :] * shading[None, :, None]
        img[container] = np.broadcast_to(painted, img.shape)[container]
    else:
        translucent = transparency is Transparency.TRANSLUCENT
        see_through = 0.35 if translucent else 0.85
        img[masks.interior] = see_through * img[masks.interior] + (1 - see_through) * tint
        img[masks.body] = 0.35 * img[masks.body] + 0.65 * np.clip(tint + 0.1, 0.0, 1.0)
        look = CONTENT_LOOKS[int(rng.integers(len(CONTENT_LOOKS)))]
        n_liquid = int(masks.liquid.sum())
        if n_liquid:
            colors, alpha = _content_colors(look, n_liquid, rng)
            if translucent:
                alpha *= 0.4
            img[masks.liquid] = (1 - alpha) * img[masks.liquid] + alpha * colors

    if occluded:
        band = occlusion_band(masks.container, rng)
        _paint_hand(img, band, rng)

    img = np.clip(img + rng.normal(0.0, 0.01, size=img.shape), 0.0, 1.0)
    pixels = np.round(img * 255.0).astype(np.uint8)
    meta = SampleMeta(
        container_id=spec.container_id,
        shape_family=spec.shape_family,
        transparency=transparency,
        occluded=bool(occluded),
        background_id=int(background_id),
    )
    return ImageSample(pixels=pixels, label=int(label), meta=meta)
