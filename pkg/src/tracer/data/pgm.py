"""Binary PGM (P5, maxval 255) heatmaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_gray(values: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo = float(np.min(v)) if vmin is None else vmin
    hi = float(np.max(v)) if vmax is None else vmax
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(scaled * 255).astype(np.uint8)


def write_pgm(path: str | Path, values: np.ndarray, vmin: float | None = None,
              vmax: float | None = None) -> None:
    v = np.asarray(values)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {v.shape}")
    gray = to_gray(v, vmin, vmax)
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_signed_pgm(stem: str | Path, values: np.ndarray) -> list[Path]:
    """Split a signed map into ``<stem>_pos.pgm`` and ``<stem>_neg.pgm`` on a shared scale."""
    v = np.asarray(values, dtype=np.float64)
    peak = float(np.abs(v).max()) if v.size else 0.0
    stem = Path(stem)
    out = []
    for suffix, channel in (("pos", np.maximum(v, 0)), ("neg", np.maximum(-v, 0))):
        p = stem.with_name(f"{stem.name}_{suffix}.pgm")
        write_pgm(p, channel, 0.0, peak if peak > 0 else 1.0)
        out.append(p)
    return out
