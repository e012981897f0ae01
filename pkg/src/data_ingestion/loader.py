"""
Read and write datasets on disk.

Layout under a dataset root:

    <root>/manifest.csv
    <root>/<role>/<container_id>/<index>.ppm

Images are binary PPM (P6, maxval 255). The manifest is one CSV shared by
all roles; writing one role keeps the rows of the others. Columns:

    filename, fill_class, container_id, shape_family, transparency,
    occluded, background_id

``filename`` is relative to the root with forward slashes, ``fill_class``
is the integer class index, ``transparency`` is "none" for source images
and ``occluded`` is 0/1.
"""

from __future__ import annotations

import logging
import os
import re
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from src.config.model_config import NUM_TARGET_CLASSES, Transparency
from src.datasets import Dataset, DatasetRole, ImageSample, SampleMeta
from src.errors import DataError, IntegrityError, PersistenceError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = [
    "filename",
    "fill_class",
    "container_id",
    "shape_family",
    "transparency",
    "occluded",
    "background_id",
]
NO_TRANSPARENCY = "none"

PathLike = Union[str, os.PathLike]

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


# ---------------------------------------------------------------------------
# PPM codec
# ---------------------------------------------------------------------------

def quantize(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 by round(v * 255)."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(pixels: np.ndarray) -> bytes:
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataError(f"PPM needs H x W x 3 uint8 pixels, got {pixels.dtype} {pixels.shape}")
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def decode_ppm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    match = _PPM_HEADER.match(buf)
    if match is None:
        raise DataError(f"{name}: not a binary PPM (P6) image")
    w, h, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise DataError(f"{name}: only 8-bit PPM is supported (maxval {maxval})")
    raster = buf[match.end():]
    if len(raster) != w * h * 3:
        raise DataError(f"{name}: expected {w * h * 3} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path: PathLike, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(pixels))


def read_ppm(path: PathLike) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes(), name=str(path))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def manifest_rows(dataset: Dataset) -> pd.DataFrame:
    counters: dict = {}
    rows = []
    for sample in dataset.samples:
        cid = sample.meta.container_id
        index = counters.get(cid, 0)
        counters[cid] = index + 1
        rows.append(
            {
                "filename": f"{dataset.role.value}/{cid}/{index:05d}.ppm",
                "fill_class": int(sample.label),
                "container_id": cid,
                "shape_family": sample.meta.shape_family,
                "transparency": NO_TRANSPARENCY if sample.meta.transparency is None else sample.meta.transparency.value,
                "occluded": int(sample.meta.occluded),
                "background_id": int(sample.meta.background_id),
            }
        )
    return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def read_manifest(root: PathLike) -> pd.DataFrame:
    root = Path(root)
    if not root.is_dir():
        raise DataError(
            f"Dataset directory not found: {root}\n"
            "Hint: run `advxfer gen-data --out <dir>` first or pass the right --data directory."
        )
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"Dataset manifest not found: {path}")
    frame = pd.read_csv(path, dtype={"filename": str, "container_id": str, "shape_family": str, "transparency": str})
    missing_cols = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing_cols:
        raise DataError(f"{path}: manifest lacks columns {missing_cols}")
    return frame[MANIFEST_COLUMNS]


# ---------------------------------------------------------------------------
# Dataset IO
# ---------------------------------------------------------------------------

def write_dataset(dataset: Dataset, root: PathLike) -> Path:
    """
    Write the images of ``dataset`` under ``root/<role>/`` and merge its rows
    into the shared manifest. Rows of other roles already in the manifest
    are kept; rows of this role are replaced.
    """
    root = Path(root)
    rows = manifest_rows(dataset)
    try:
        for rel, sample in zip(rows["filename"], dataset.samples):
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            write_ppm(path, sample.pixels)
        manifest_path = root / MANIFEST_NAME
        if manifest_path.exists():
            existing = read_manifest(root)
            keep = ~existing["filename"].str.startswith(f"{dataset.role.value}/")
            rows = pd.concat([existing[keep], rows], ignore_index=True)
        tmp = manifest_path.with_name(f".{MANIFEST_NAME}.tmp")
        rows.to_csv(tmp, index=False, lineterminator="\n")
        os.replace(tmp, manifest_path)
    except OSError as exc:
        raise PersistenceError(f"cannot write dataset to {root}: {exc}") from exc
    logger.info("Wrote %d %s images to %s", len(dataset), dataset.role.value, root)
    return root


def _parse_transparency(value: str) -> Optional[Transparency]:
    return None if value == NO_TRANSPARENCY else Transparency(value)


def read_dataset(root: PathLike, role: DatasetRole, split_id: Optional[str] = None) -> Dataset:
    """
    Load one role from a dataset root, checking the manifest against the files.

    Raises:
        DataError: the directory or manifest is missing.
        IntegrityError: manifest rows without a file, or image files of this
            role that the manifest does not list.
    """
    root = Path(root)
    frame = read_manifest(root)
    prefix = f"{role.value}/"
    rows = frame[frame["filename"].str.startswith(prefix)]
    if rows.empty:
        raise DataError(f"{root}: manifest has no {role.value} samples")

    listed = set(rows["filename"])
    missing = sorted(f for f in listed if not (root / f).is_file())
    on_disk = {p.relative_to(root).as_posix() for p in (root / role.value).rglob("*.ppm")}
    unexpected = sorted(on_disk - listed)
    if missing or unexpected:
        raise IntegrityError(f"{root}: manifest and {role.value} images disagree", missing, unexpected)

    samples: List[ImageSample] = []
    for row in rows.itertuples(index=False):
        meta = SampleMeta(
            container_id=row.container_id,
            shape_family=row.shape_family,
            transparency=_parse_transparency(row.transparency),
            occluded=bool(int(row.occluded)),
            background_id=int(row.background_id),
        )
        samples.append(ImageSample(pixels=read_ppm(root / row.filename), label=int(row.fill_class), meta=meta))

    num_classes = NUM_TARGET_CLASSES if role is not DatasetRole.SOURCE else int(rows["fill_class"].max()) + 1
    logger.info("Read %d %s images from %s", len(samples), role.value, root)
    return Dataset(samples, role, split_id or root.name, num_classes)
