"""
Binary checkpoint format for MicroResNet.

Little-endian layout:

    magic        4 bytes   b"MRV1"
    version      uint32
    provenance   uint32 length + UTF-8 JSON (architecture + training record)
    count        uint32
    per tensor:  uint32 length + UTF-8 name, uint8 dtype code (0 = single,
                 1 = double), uint8 rank, rank x uint32 dims, raw values
    crc32        uint32 over every preceding byte

Tensors are written in sorted-name order and the JSON with sorted keys, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from src.errors import (
    AdvXferError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ChecksumError,
    PersistenceError,
)
from src.model.micro_resnet import MicroResNet, build_model, freeze_prefix
from src.tensor import ScalarMode

logger = logging.getLogger(__name__)

MAGIC = b"MRV1"
FORMAT_VERSION = 1

PathLike = Union[str, os.PathLike]


@dataclass
class Checkpoint:
    version: int
    provenance: Dict[str, Any]
    tensors: Dict[str, np.ndarray]

    @property
    def architecture(self) -> Dict[str, Any]:
        return self.provenance.get("architecture", {})

    @property
    def training(self) -> Dict[str, Any]:
        return self.provenance.get("training", {})


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def _lp_utf8(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(model: MicroResNet) -> bytes:
    provenance = {"architecture": model.architecture(), "training": model.provenance}
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _lp_utf8(json.dumps(provenance, sort_keys=True, separators=(",", ":")))]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, arr in state.items():
        mode = ScalarMode.from_dtype(arr.dtype)
        parts.append(_lp_utf8(name))
        parts.append(struct.pack("<BB", mode.code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(model: MicroResNet, path: PathLike) -> Path:
    """Write atomically (temp file + rename) so concurrent readers never see a partial file."""
    path = Path(path)
    payload = encode_checkpoint(model)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise PersistenceError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("Saved checkpoint %s (%d bytes)", path, len(payload))
    return path


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: need {n} bytes at offset {self.off}, file has {len(self.buf)}"
            )
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def text(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"invalid UTF-8 at offset {self.off}") from exc


def _expected_length(buf: bytes) -> Optional[int]:
    """Byte length implied by an intact header, or None when the header cannot be trusted."""
    try:
        reader = _Reader(buf)
        reader.take(len(MAGIC) + 4)
        raw = reader.take(reader.u32())
        arch = json.loads(raw.decode("utf-8")).get("architecture", {})
        model = build_model(
            widths=arch["widths"],
            num_classes=int(arch["num_classes"]),
            seed=0,
            in_channels=int(arch["in_channels"]),
            mode=ScalarMode(arch["precision"]),
        )
    except (AdvXferError, UnicodeDecodeError, ValueError, KeyError, TypeError, AttributeError):
        return None
    tensors = sum(
        4 + len(name.encode("utf-8")) + 2 + 4 * arr.ndim + arr.nbytes for name, arr in model.state_dict().items()
    )
    return reader.off + 4 + tensors + 4


def _damage(buf: bytes, stored: int, actual: int) -> PersistenceError:
    expected = _expected_length(buf)
    if expected is not None and len(buf) < expected:
        return CheckpointTruncatedError(f"checkpoint truncated: {len(buf)} of {expected} bytes present")
    return ChecksumError(f"CRC32 mismatch: stored {stored:#010x}, computed {actual:#010x}")


def decode_checkpoint(buf: bytes) -> Checkpoint:
    """
    Magic and version are checked first, then the CRC32 over the whole
    file, and only then is the body parsed. A file that fails its CRC is
    reported as truncated when its header is intact and promises more
    bytes than the file holds; every other CRC failure is a ChecksumError.
    """
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a MicroResNet checkpoint (bad magic bytes)")
    reader = _Reader(buf)
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(buf) < reader.off + 8:
        raise CheckpointTruncatedError("checkpoint truncated: provenance length or CRC32 trailer missing")
    stored = struct.unpack("<I", buf[-4:])[0]
    actual = zlib.crc32(buf[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise _damage(buf, stored, actual)

    try:
        provenance = json.loads(reader.text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"provenance block is not valid JSON: {exc}") from exc

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.text()
        code, rank = reader.u8(), reader.u8()
        try:
            dtype = ScalarMode.from_code(code).dtype.newbyteorder("<")
        except ValueError as exc:
            raise CheckpointFormatError(f"tensor {name!r}: {exc}") from exc
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(reader.take(count * dtype.itemsize), dtype=dtype)
        tensors[name] = values.reshape(dims).astype(dtype.newbyteorder("="))

    remaining = len(buf) - reader.off
    if remaining != 4:
        raise CheckpointFormatError(f"tensor section ends {remaining - 4:+d} bytes from the CRC32 trailer")
    return Checkpoint(version=version, provenance=provenance, tensors=tensors)


def read_checkpoint(path: PathLike) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(buf)


def model_from_checkpoint(ckpt: Checkpoint) -> MicroResNet:
    arch = ckpt.architecture
    if arch.get("model") != "MicroResNet":
        raise CheckpointFormatError(f"unsupported architecture record: {arch}")
    model = build_model(
        widths=arch["widths"],
        num_classes=int(arch["num_classes"]),
        seed=0,
        in_channels=int(arch["in_channels"]),
        mode=ScalarMode(arch["precision"]),
    )
    model.load_state_dict(ckpt.tensors)
    freeze_prefix(model, int(arch.get("frozen_prefix", 0)))
    model.provenance = dict(ckpt.training)
    return model


def load_checkpoint(path: PathLike) -> MicroResNet:
    """Fully validate the file, then rebuild the model; nothing is returned on error."""
    return model_from_checkpoint(read_checkpoint(path))
