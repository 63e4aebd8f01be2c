"""Reliability score of explanation masks and a comparison harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tracer.data.dataset import LabeledDataset
from tracer.engine.model import TappedModel

MODES = ("baseline-substitute", "gaussian-noise")


@dataclass(frozen=True)
class PerturbationSpec:
    p: float = 0.5
    mode: str = "baseline-substitute"
    noise_scale: float = 0.5
    seed: int = 0
    baseline: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")


def perturb(x: np.ndarray, mask: np.ndarray, spec: PerturbationSpec,
            rng: np.random.Generator | None = None,
            baseline: float | np.ndarray | None = None) -> np.ndarray:
    """Replace ``ceil(p * |M|)`` randomly chosen mask features; the rest stay put."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.shape != x.shape:
        raise ValueError(f"mask shape {mask.shape} differs from sample shape {x.shape}")
    significant = np.flatnonzero(mask.reshape(-1) != 0)
    if significant.size == 0:
        raise ValueError("no significant region: mask is empty")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    count = math.ceil(spec.p * significant.size - 1e-9)
    chosen = np.sort(rng.choice(significant, size=count, replace=False))
    out = x.reshape(-1).copy()
    if spec.mode == "baseline-substitute":
        b = spec.baseline if baseline is None else baseline
        b = np.asarray(b, dtype=np.float64)
        b = np.full(x.size, float(b)) if b.ndim == 0 else b.reshape(-1)
        if b.size != x.size:
            raise ValueError(f"baseline has {b.size} entries, sample has {x.size}")
        out[chosen] = b[chosen]
    else:
        out[chosen] = out[chosen] + rng.normal(0.0, spec.noise_scale, size=count)
    return out.reshape(x.shape)


@dataclass
class ReliabilityResult:
    scores: list[float]  # S per trial
    flags: np.ndarray  # trials x samples, 1 where the prediction flipped
    trials: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores, ddof=1)) if self.trials >= 2 else float("nan")

    @property
    def score(self) -> float:
        return self.mean


def reliability(model: TappedModel, dataset: LabeledDataset, masks: np.ndarray | Sequence[np.ndarray],
                spec: PerturbationSpec, trials: int = 10,
                baseline: float | np.ndarray | None = None) -> ReliabilityResult:
    """``S = |X|^-1 * sum 1{f(x) != f(x')}`` for each trial."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    masks = np.asarray(masks)
    if masks.shape != dataset.features.shape:
        raise ValueError(f"masks shape {masks.shape} differs from samples {dataset.features.shape}")
    before = model.predict(dataset.features)
    flags = np.zeros((trials, len(dataset)), dtype=np.int8)
    for t in range(trials):
        rng = np.random.default_rng([spec.seed, t])
        perturbed = np.stack([perturb(x, m, spec, rng, baseline) for x, m in zip(dataset.features, masks)])
        flags[t] = model.predict(perturbed) != before
    return ReliabilityResult([float(f.mean()) for f in flags], flags, trials)


def random_masks(masks: np.ndarray, seed: int) -> np.ndarray:
    """Uniform random masks with the same per-sample cardinality."""
    masks = np.asarray(masks)
    rng = np.random.default_rng(seed)
    out = np.zeros(masks.shape, dtype=np.float64)
    flat = out.reshape(len(masks), -1)
    for i, m in enumerate(masks.reshape(len(masks), -1)):
        k = int(np.count_nonzero(m))
        flat[i, rng.choice(flat.shape[1], size=k, replace=False)] = 1.0
    return out


def top_k_masks(attributions: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    """Binary masks keeping the ``k`` largest-|a| features of each attribution map."""
    attributions = np.asarray(attributions, dtype=np.float64)
    flat = np.abs(attributions.reshape(len(attributions), -1))
    out = np.zeros_like(flat)
    for i, k in enumerate(cardinalities):
        out[i, np.argsort(-flat[i], kind="stable")[:int(k)]] = 1.0
    return out.reshape(attributions.shape)


@dataclass
class ComparisonTable:
    results: dict[str, ReliabilityResult] = field(default_factory=dict)
    spec: PerturbationSpec | None = None
    excluded: list[int] = field(default_factory=list)  # samples with an empty mask in some set

    def rows(self) -> list[dict[str, object]]:
        return [{"method": name, "mean": r.mean, "std": r.std, "trials": r.trials}
                for name, r in self.results.items()]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "mean", "std", "trials"])
            for row in self.rows():
                w.writerow([row["method"], f"{row['mean']:.6f}", f"{row['std']:.6f}", row["trials"]])

    def to_json(self, path: str | Path) -> None:
        doc = {"spec": vars(self.spec) if self.spec else None, "excluded": self.excluded,
               "methods": [dict(r, scores=self.results[r["method"]].scores) for r in self.rows()]}
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def compare(model: TappedModel, dataset: LabeledDataset, mask_sets: Mapping[str, np.ndarray],
            spec: PerturbationSpec, trials: int = 10, random_for: str | None = None,
            baseline: float | np.ndarray | None = None) -> ComparisonTable:
    """Reliability per named mask set.

    With ``random_for`` set, a ``"random"`` row is added whose masks match the
    cardinality of that method's masks sample by sample. Samples whose mask
    is empty in any set have no significant region to perturb; they are left
    out for every method and listed in ``excluded``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    sets = dict(mask_sets)
    if random_for is not None:
        if random_for not in sets:
            raise KeyError(f"unknown mask set {random_for!r}")
        sets["random"] = random_masks(sets[random_for], spec.seed)
    if len(sets) < 2:
        raise ValueError("need at least two mask sets to compare")
    sets = {name: np.asarray(m) for name, m in sets.items()}
    empty = np.zeros(len(dataset), dtype=bool)
    for masks in sets.values():
        empty |= ~np.any(masks.reshape(len(masks), -1) != 0, axis=1)
    keep = np.flatnonzero(~empty)
    if keep.size == 0:
        raise ValueError("every sample has an empty mask in some set")
    table = ComparisonTable(spec=spec, excluded=[int(i) for i in np.flatnonzero(empty)])
    subset = dataset.subset(keep)
    for name, masks in sets.items():
        table.results[name] = reliability(model, subset, masks[keep], spec, trials, baseline)
    return table
