"""Kernel representation similarity: HSIC, CKA and the thresholded binary matrix."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tracer.data.pgm import write_pgm

KERNELS = ("linear", "gaussian")


class DegenerateRepresentationError(ValueError):
    """A representation with zero self-HSIC (e.g. constant activations)."""


def _as_matrix(acts: np.ndarray) -> np.ndarray:
    acts = np.asarray(acts, dtype=np.float64)
    return acts.reshape(acts.shape[0], -1)


def kernel_matrix(acts: np.ndarray, kernel: str = "linear") -> np.ndarray:
    """n x n Gram matrix of per-sample (flattened) activations."""
    f = _as_matrix(acts)
    if f.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {f.shape[0]}")
    if kernel == "linear":
        return f @ f.T
    if kernel == "gaussian":
        sq = np.sum(f * f, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * f @ f.T, 0.0)
        off = d2[np.triu_indices(len(f), k=1)]
        med = np.median(off[off > 0]) if np.any(off > 0) else 1.0
        return np.exp(-d2 / (2.0 * med))
    raise ValueError(f"kernel must be one of {KERNELS}, got {kernel!r}")


def center(K: np.ndarray) -> np.ndarray:
    """H K H without forming H."""
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def hsic(Ki: np.ndarray, Kj: np.ndarray) -> float:
    """``(n-1)^-2 Tr(H Ki H Kj)``."""
    Ki = np.asarray(Ki, dtype=np.float64)
    Kj = np.asarray(Kj, dtype=np.float64)
    if Ki.shape != Kj.shape or Ki.ndim != 2 or Ki.shape[0] != Ki.shape[1]:
        raise ValueError(f"kernel matrices must be equal-size squares, got {Ki.shape} and {Kj.shape}")
    n = Ki.shape[0]
    # Tr(HKiH Kj) with HKiH symmetric
    return float(np.sum(center(Ki) * Kj.T)) / (n - 1) ** 2


def cka(Ki: np.ndarray, Kj: np.ndarray) -> float:
    self_i = hsic(Ki, Ki)
    self_j = hsic(Kj, Kj)
    scale = max(float(np.abs(Ki).max()), float(np.abs(Kj).max()), 1e-300)
    tol = (1e-10 * scale) ** 2
    if self_i <= tol or self_j <= tol:
        raise DegenerateRepresentationError(
            f"zero self-HSIC ({self_i:.3g}, {self_j:.3g}); activations are constant across samples"
        )
    # averaged so that cka(Ki, Kj) == cka(Kj, Ki) bit for bit
    cross = 0.5 * (hsic(Ki, Kj) + hsic(Kj, Ki))
    value = cross / np.sqrt(self_i * self_j)
    return float(min(max(value, 0.0), 1.0))


def binary_matrix(values: np.ndarray, epsilon: float) -> np.ndarray:
    """1 where CKA >= 1 - epsilon; undefined (NaN) entries map to 0."""
    with np.errstate(invalid="ignore"):
        return (np.nan_to_num(values, nan=-1.0) >= 1.0 - epsilon).astype(np.int8)


@dataclass
class CkaMatrix:
    values: np.ndarray  # L x L, NaN where undefined
    epsilon: float
    binary: np.ndarray
    labels: list[str]

    @property
    def undefined(self) -> np.ndarray:
        return np.isnan(self.values)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tap"] + self.labels)
            for label, row in zip(self.labels, self.values):
                w.writerow([label] + ["undefined" if np.isnan(v) else f"{v:.12f}" for v in row])

    def to_pgm(self, path: str | Path) -> None:
        write_pgm(path, np.nan_to_num(self.values, nan=0.0), 0.0, 1.0)


def build_cka_matrix(taps: Mapping[int, np.ndarray] | Sequence[np.ndarray], epsilon: float,
                     kernel: str = "linear") -> CkaMatrix:
    """Pairwise CKA over tap activations (rows = samples)."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    if isinstance(taps, Mapping):
        keys = sorted(taps)
        acts = [taps[k] for k in keys]
        labels = [f"L{k}" for k in keys]
    else:
        acts = list(taps)
        labels = [f"T{i}" for i in range(len(acts))]
    if len(acts) < 2:
        raise ValueError("need at least 2 tap points")
    ns = {np.asarray(a).shape[0] for a in acts}
    if len(ns) != 1:
        raise ValueError(f"tap matrices disagree on sample count: {sorted(ns)}")
    kernels = [kernel_matrix(a, kernel) for a in acts]
    L = len(kernels)
    values = np.full((L, L), np.nan)
    for i in range(L):
        for j in range(i, L):
            try:
                v = cka(kernels[i], kernels[j])
            except DegenerateRepresentationError:
                continue
            # the diagonal is 1 by definition; avoid rounding below 1 - 0
            values[i, j] = values[j, i] = 1.0 if i == j else v
    return CkaMatrix(values, epsilon, binary_matrix(values, epsilon), labels)
