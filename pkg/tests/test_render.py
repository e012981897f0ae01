import numpy as np
import pytest

from src.config.model_config import CONTAINERS, ContainerSpec, FillLevel, Transparency
from src.data_generation.render import (
    OCCLUSION_COVERAGE,
    background,
    container_masks,
    occlusion_band,
    render_container,
    render_masks,
    validate_profile,
)
from src.errors import GenerationError

CYLINDER = ContainerSpec(
    container_id="cylinder",
    name="Cylinder",
    shape_family="cylinder",
    category="cup",
    transparency=Transparency.TRANSPARENT,
    profile=((0.0, 0.2), (1.0, 0.2)),
    height=0.7,
)


def test_same_arguments_same_pixels():
    spec = CONTAINERS["wine_glass"]
    a = render_container(spec, FillLevel.HALF, occluded=True, background_id=2, seed=42, size=32)
    b = render_container(spec, FillLevel.HALF, occluded=True, background_id=2, seed=42, size=32)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    c = render_container(spec, FillLevel.HALF, occluded=True, background_id=2, seed=43, size=32)
    assert not np.array_equal(a.pixels, c.pixels)


def test_image_format_and_metadata():
    sample = render_container(CONTAINERS["green_glass"], FillLevel.NINETY, background_id=1, seed=0, size=32)
    assert sample.pixels.shape == (32, 32, 3) and sample.pixels.dtype == np.uint8
    assert sample.label == FillLevel.NINETY
    assert sample.meta.transparency is Transparency.TRANSLUCENT
    assert sample.meta.shape_family == "tapered_cup"
    assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0


def test_half_full_cylinder():
    masks = container_masks(CYLINDER, 0.5, size=64)
    assert masks.liquid_fraction == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize("cid", sorted(CONTAINERS))
@pytest.mark.parametrize("fill", [FillLevel.EMPTY, FillLevel.HALF, FillLevel.NINETY])
def test_liquid_fraction_matches_fill_level(cid, fill):
    masks = render_masks(CONTAINERS[cid], fill, seed=3, size=64)
    assert masks.liquid_fraction == pytest.approx(fill.fraction, abs=0.02)
    assert not (masks.liquid & ~masks.interior).any()


def test_liquid_settles_at_the_bottom():
    masks = container_masks(CYLINDER, 0.5, size=64)
    rows = np.flatnonzero(masks.interior.any(axis=1))
    bottom = rows[-1]
    np.testing.assert_array_equal(masks.liquid[bottom], masks.interior[bottom])
    assert not masks.liquid[rows[0]].any()


def test_opaque_container_is_unknown_whatever_the_fill():
    sample = render_container(CONTAINERS["red_cup"], FillLevel.HALF, seed=1, size=32)
    assert sample.label == FillLevel.UNKNOWN


def test_transparency_override_hides_the_contents():
    sample = render_container(CONTAINERS["small_cup"], FillLevel.NINETY, transparency=Transparency.OPAQUE, seed=1, size=32)
    assert sample.label == FillLevel.UNKNOWN
    assert sample.meta.transparency is Transparency.OPAQUE


def test_see_through_container_needs_a_fill_level():
    with pytest.raises(GenerationError):
        render_container(CONTAINERS["wine_glass"], FillLevel.UNKNOWN, seed=0, size=32)


@pytest.mark.parametrize(
    "profile",
    [
        ((0.0, 0.0), (1.0, 0.0)),
        ((0.0, 0.2),),
        ((0.0, 0.2), (0.0, 0.3), (1.0, 0.2)),
        ((0.0, 0.2), (1.0, -0.1)),
        ((0.0, float("nan")), (1.0, 0.2)),
    ],
)
def test_degenerate_profiles(profile):
    with pytest.raises(GenerationError):
        validate_profile(profile)


def test_degenerate_container_cannot_render():
    flat = ContainerSpec("flat", "Flat", "flat", "cup", Transparency.TRANSPARENT, ((0.0, 0.0), (1.0, 0.0)), 0.5)
    with pytest.raises(GenerationError):
        render_container(flat, FillLevel.EMPTY, seed=0, size=32)


@pytest.mark.parametrize("cid", sorted(CONTAINERS))
def test_occlusion_band_coverage(cid):
    low, high = OCCLUSION_COVERAGE
    for seed in range(10):
        masks = render_masks(CONTAINERS[cid], FillLevel.HALF, seed=seed, size=64)
        container = masks.container
        band = occlusion_band(container, np.random.default_rng(seed))
        coverage = (band & container).sum() / container.sum()
        assert low <= coverage <= high, (cid, seed, coverage)


def test_background_id_range():
    rng = np.random.default_rng(0)
    for bg in range(4):
        img = background(bg, 16, rng)
        assert img.shape == (16, 16, 3)
    with pytest.raises(GenerationError):
        background(4, 16, rng)
