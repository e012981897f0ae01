import struct

import numpy as np
import pytest

from src.errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ChecksumError,
    PersistenceError,
)
from src.model import build_model, freeze_prefix, load_checkpoint, read_checkpoint, save_checkpoint
from src.model.checkpoint import decode_checkpoint, encode_checkpoint
from src.tensor import ScalarMode, Tensor

from tests.conftest import TINY_WIDTHS


@pytest.fixture
def model():
    m = build_model(TINY_WIDTHS, num_classes=4, seed=11)
    freeze_prefix(m, 2)
    m.stem.bn.stats.mean[:] = [0.25, -0.5]
    m.provenance = {"strategy": "AT_FT", "seed": 11, "eps_s": 0.1}
    return m


def test_roundtrip_restores_everything(tmp_path, model):
    path = save_checkpoint(model, tmp_path / "model.mrv")
    restored = load_checkpoint(path)

    original, loaded = model.state_dict(), restored.state_dict()
    assert list(original) == list(loaded)
    for name in original:
        np.testing.assert_array_equal(original[name], loaded[name])
        assert original[name].dtype == loaded[name].dtype
    assert restored.frozen_prefix == 2
    assert restored.provenance == model.provenance
    assert restored.widths == model.widths

    x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, 8, 8)), mode=ScalarMode.SINGLE)
    np.testing.assert_array_equal(model.forward(x).data, restored.forward(x).data)


def test_save_load_save_is_byte_identical(tmp_path, model):
    first = save_checkpoint(model, tmp_path / "a.mrv")
    second = save_checkpoint(load_checkpoint(first), tmp_path / "b.mrv")
    assert first.read_bytes() == second.read_bytes()


def test_double_precision_roundtrip():
    m = build_model(TINY_WIDTHS, seed=0, mode=ScalarMode.DOUBLE)
    ckpt = decode_checkpoint(encode_checkpoint(m))
    assert ckpt.tensors["head.weight"].dtype == np.float64
    assert ckpt.architecture["precision"] == ScalarMode.DOUBLE.value


def test_header_records_training_provenance(tmp_path, model):
    ckpt = read_checkpoint(save_checkpoint(model, tmp_path / "m.mrv"))
    assert ckpt.version == 1
    assert ckpt.training["strategy"] == "AT_FT"
    assert ckpt.architecture["widths"] == list(TINY_WIDTHS)


def _field_offsets(buf):
    """Byte offsets of the provenance length, the JSON, the first tensor's name length, name and dims."""
    header_end = 12 + struct.unpack("<I", buf[8:12])[0]
    name_len_at = header_end + 4
    name_at = name_len_at + 4
    dims_at = name_at + struct.unpack("<I", buf[name_len_at:name_at])[0] + 2
    return {"provenance_length": 8, "provenance_length_high": 9, "json": 20, "name_length": name_len_at, "name": name_at + 1, "dims": dims_at}


@pytest.mark.parametrize(
    "field,mask",
    [("provenance_length", 0x40), ("provenance_length_high", 0x40), ("json", 0x40), ("name_length", 0x01), ("name", 0x20), ("dims", 0x01)],
)
def test_flipped_structural_byte_is_a_checksum_error(model, field, mask):
    buf = bytearray(encode_checkpoint(model))
    buf[_field_offsets(bytes(buf))[field]] ^= mask
    with pytest.raises(ChecksumError) as info:
        decode_checkpoint(bytes(buf))
    assert info.value.exit_code == 5


def test_flipped_tensor_value_is_a_checksum_error(model):
    buf = bytearray(encode_checkpoint(model))
    buf[-5] ^= 0x01  # last byte of the last tensor's values
    with pytest.raises(ChecksumError):
        decode_checkpoint(bytes(buf))


def test_bad_magic(model):
    buf = b"XXXX" + encode_checkpoint(model)[4:]
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(buf)


def test_version_checked_before_checksum(model):
    buf = bytearray(encode_checkpoint(model))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bytes(buf))


@pytest.mark.parametrize("cut", ["in_version", "before_provenance", "after_provenance", "last_byte"])
def test_truncated_file(model, cut):
    buf = encode_checkpoint(model)
    header_end = 12 + struct.unpack("<I", buf[8:12])[0]
    keep = {"in_version": 6, "before_provenance": 10, "after_provenance": header_end + 10, "last_byte": len(buf) - 1}[cut]
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(buf[:keep])


def test_missing_file_is_persistence_error(tmp_path):
    with pytest.raises(PersistenceError) as info:
        load_checkpoint(tmp_path / "absent.mrv")
    assert info.value.exit_code == 5


def test_atomic_write_leaves_no_temp_files(tmp_path, model):
    save_checkpoint(model, tmp_path / "m.mrv")
    save_checkpoint(model, tmp_path / "m.mrv")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.mrv"]
