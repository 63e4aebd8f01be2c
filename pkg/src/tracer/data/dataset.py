from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np


@dataclass(frozen=True)
class Normalization:
    """Per-feature affine map: ``raw = normalized * scale + offset``."""

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.scale) == 0):
            raise ValueError("normalization scale must be nonzero for every feature")

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.offset) / self.scale

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    def to_dict(self) -> dict[str, Any]:
        return {"scale": np.asarray(self.scale).tolist(), "offset": np.asarray(self.offset).tolist()}

    @classmethod
    def identity(cls, shape: tuple[int, ...]) -> "Normalization":
        return cls(np.ones(shape), np.zeros(shape))


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_names: list[str] | None = None
    normalization: Normalization | None = None
    class_names: list[str] | None = None
    encoder: Any = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.normalization is None:
            self.normalization = Normalization.identity(self.input_shape)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def n_features(self) -> int:
        return int(np.prod(self.input_shape))

    def subset(self, index: np.ndarray | list[int]) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return replace(self, features=self.features[index], labels=self.labels[index])

    def split(self, test_fraction: float, seed: int) -> tuple["LabeledDataset", "LabeledDataset"]:
        """Seeded shuffle split into (train, test)."""
        order = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(np.sort(order[n_test:])), self.subset(np.sort(order[:n_test]))

    def feature_mean(self) -> np.ndarray:
        """Per-feature mean over this split (baseline for interventions)."""
        return self.features.mean(axis=0)


def load_digits_dataset() -> LabeledDataset:
    """The 8x8 handwritten-digit set bundled with scikit-learn, scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = bunch.images.astype(np.float64)[:, None, :, :] / 16.0
    return LabeledDataset(
        features=images,
        labels=bunch.target,
        class_count=10,
        normalization=Normalization(np.full((1, 8, 8), 16.0), np.zeros((1, 8, 8))),
        class_names=[str(i) for i in range(10)],
    )


def make_blobs(n: int = 400, separation: float = 6.0, std: float = 1.0,
               seed: int = 0) -> LabeledDataset:
    """Two isotropic 2-D Gaussian classes, min-max normalized to [0, 1]."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    centers = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    raw = centers[labels] + rng.normal(scale=std, size=(n, 2))
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    norm = Normalization(hi - lo, lo)
    return LabeledDataset(
        features=norm.normalize(raw),
        labels=labels,
        class_count=2,
        feature_names=["x0", "x1"],
        normalization=norm,
        class_names=["0", "1"],
    )
