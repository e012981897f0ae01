import numpy as np
import pytest

from src.data_ingestion.loader import (
    MANIFEST_COLUMNS,
    decode_ppm,
    encode_ppm,
    quantize,
    read_dataset,
    read_manifest,
    write_dataset,
)
from src.datasets import DatasetRole
from src.errors import DataError, IntegrityError


@pytest.fixture
def written(tmp_path, target_sets, source_set):
    train, test = target_sets
    for dataset in (source_set, train, test):
        write_dataset(dataset, tmp_path)
    return tmp_path


def test_roundtrip_is_exact(written, target_sets):
    train, _ = target_sets
    loaded = read_dataset(written, DatasetRole.TARGET_TRAIN, split_id="s1")
    assert len(loaded) == len(train)
    np.testing.assert_array_equal(loaded.pixels(), train.pixels())
    np.testing.assert_array_equal(loaded.labels, train.labels)
    assert [s.meta for s in loaded.samples] == [s.meta for s in train.samples]
    assert loaded.fingerprint() == train.fingerprint()


def test_source_roundtrip_keeps_missing_transparency(written, source_set):
    loaded = read_dataset(written, DatasetRole.SOURCE)
    assert all(s.meta.transparency is None for s in loaded.samples)
    np.testing.assert_array_equal(loaded.labels, source_set.labels)


def test_manifest_layout(written, target_sets, source_set):
    manifest = read_manifest(written)
    assert list(manifest.columns) == MANIFEST_COLUMNS
    assert len(manifest) == len(source_set) + sum(len(d) for d in target_sets)
    assert manifest["filename"].iloc[len(source_set)].startswith("target-train/wine_glass/00000")


def test_rewriting_one_role_keeps_the_others(written, target_sets, source_set):
    write_dataset(target_sets[1], written)
    manifest = read_manifest(written)
    assert len(manifest) == len(source_set) + sum(len(d) for d in target_sets)


def test_deleted_image_is_reported(written):
    victim = written / "target-test" / "beer_cup" / "00001.ppm"
    victim.unlink()
    with pytest.raises(IntegrityError) as info:
        read_dataset(written, DatasetRole.TARGET_TEST)
    assert info.value.missing == ["target-test/beer_cup/00001.ppm"]
    assert info.value.exit_code == 3


def test_stray_image_is_reported(written):
    stray = written / "target-train" / "wine_glass" / "09999.ppm"
    stray.write_bytes(encode_ppm(np.zeros((16, 16, 3), dtype=np.uint8)))
    with pytest.raises(IntegrityError) as info:
        read_dataset(written, DatasetRole.TARGET_TRAIN)
    assert info.value.unexpected == ["target-train/wine_glass/09999.ppm"]


def test_missing_directory(tmp_path):
    with pytest.raises(DataError) as info:
        read_dataset(tmp_path / "nowhere", DatasetRole.TARGET_TRAIN)
    assert "gen-data" in str(info.value)


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        read_manifest(tmp_path)


def test_ppm_header_may_carry_comments():
    pixels = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    raw = b"P6\n# made by hand\n3 2\n255\n" + pixels.tobytes()
    np.testing.assert_array_equal(decode_ppm(raw), pixels)
    np.testing.assert_array_equal(decode_ppm(encode_ppm(pixels)), pixels)


@pytest.mark.parametrize(
    "raw",
    [b"P3\n1 1\n255\n\x00\x00\x00", b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", b"P6\n2 2\n255\n\x00"],
)
def test_bad_ppm(raw):
    with pytest.raises(DataError):
        decode_ppm(raw)


def test_encoder_wants_uint8_rgb():
    with pytest.raises(DataError):
        encode_ppm(np.zeros((2, 2, 3)))


def test_quantize_rounds_and_clips():
    np.testing.assert_array_equal(quantize(np.array([-0.2, 0.0, 0.5, 1.0, 1.7])), [0, 0, 128, 255, 255])
