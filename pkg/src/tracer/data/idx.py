"""IDX (MNIST-family) reader."""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from tracer.data.dataset import LabeledDataset, Normalization

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path: str | Path, expected_magic: int) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 4:
        raise IdxFormatError(f"{path}: file shorter than the magic number")
    magic = int.from_bytes(data[:4], "big")
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: truncated dimension header")
    dims = tuple(int.from_bytes(data[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim))
    count = int(np.prod(dims))
    payload = data[header:]
    if len(payload) < count:
        raise IdxFormatError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    if len(payload) > count:
        raise IdxFormatError(f"{path}: {len(payload) - count} unexpected trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path,
             class_count: int | None = None) -> LabeledDataset:
    """Load an image/label IDX pair as N x 1 x H x W pixels in [0, 1]."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    n, h, w = images.shape
    k = class_count if class_count is not None else (int(labels.max()) + 1 if n else 1)
    return LabeledDataset(
        features=images.astype(np.float64)[:, None, :, :] / 255.0,
        labels=labels.astype(np.int64),
        class_count=k,
        normalization=Normalization(np.full((1, h, w), 255.0), np.zeros((1, h, w))),
    )
