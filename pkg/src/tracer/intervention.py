"""Feature interventions: substitute a baseline on an index set of a sample.

Indices address the flattened sample (row-major over C x H x W for images).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tracer.engine.model import TappedModel

STRATEGIES = ("single-feature", "patch-occlusion", "coalition-sampling")
BASELINES = ("zero", "dataset-mean", "per-feature-mean")


@dataclass(frozen=True)
class Intervention:
    index_set: tuple[int, ...]
    baseline: np.ndarray  # per-feature, flattened; only entries in index_set are used
    sample: np.ndarray  # intervened x', same shape as x

    @property
    def is_null(self) -> bool:
        return not self.index_set


def _baseline_vector(baseline: float | np.ndarray, d: int) -> np.ndarray:
    b = np.asarray(baseline, dtype=np.float64)
    if b.ndim == 0:
        b = np.full(d, float(b))
    else:
        b = b.reshape(-1)
        if b.size != d:
            raise ValueError(f"baseline has {b.size} entries, sample has {d} features")
    if not np.all(np.isfinite(b)):
        raise ValueError("baseline must be finite")
    return b


def apply(x: np.ndarray, index_set: Sequence[int], baseline: float | np.ndarray) -> Intervention:
    """``x'_i = b_i`` for ``i`` in the index set, ``x_i`` elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    idx = tuple(sorted({int(i) for i in index_set}))
    if idx and (idx[0] < 0 or idx[-1] >= d):
        raise IndexError(f"intervention index out of range for {d} features: {idx[0]}..{idx[-1]}")
    b = _baseline_vector(baseline, d)
    flat = x.reshape(-1).copy()
    if idx:
        sel = np.array(idx)
        flat[sel] = b[sel]
    return Intervention(idx, b, flat.reshape(x.shape))


@dataclass(frozen=True)
class InterventionPlan:
    strategy: str = "single-feature"
    patch_size: int = 4
    stride: int | None = None
    coalition_count: int = 100
    max_coalition_size: int | None = None
    baseline: str = "per-feature-mean"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.patch_size < 1 or (self.stride is not None and self.stride < 1):
            raise ValueError("patch size and stride must be positive")
        if self.coalition_count < 1:
            raise ValueError("coalition count must be positive")


def baseline_for(plan: InterventionPlan, train_features: np.ndarray | None,
                 shape: tuple[int, ...]) -> np.ndarray:
    """Resolve the plan's baseline policy to a per-feature vector (training split only)."""
    d = int(np.prod(shape))
    if plan.baseline == "zero":
        return np.zeros(d)
    if train_features is None:
        raise ValueError(f"baseline policy {plan.baseline!r} needs the training features")
    flat = np.asarray(train_features, dtype=np.float64).reshape(len(train_features), -1)
    if plan.baseline == "dataset-mean":
        return np.full(d, flat.mean())
    return flat.mean(axis=0)


def _patch_sets(shape: tuple[int, ...], size: int, stride: int) -> list[tuple[int, ...]]:
    if len(shape) == 2:
        shape = (1,) + tuple(shape)
    if len(shape) != 3:
        raise ValueError(f"patch occlusion needs an image shape (C, H, W), got {shape}")
    c, h, w = shape
    if size > h or size > w:
        raise ValueError(f"patch size {size} larger than image {h}x{w}")
    rows = list(range(0, h - size + 1, stride))
    cols = list(range(0, w - size + 1, stride))
    # extra edge-aligned patches keep every pixel covered
    if rows[-1] + size < h:
        rows.append(h - size)
    if cols[-1] + size < w:
        cols.append(w - size)
    grid = np.arange(c * h * w).reshape(c, h, w)
    return [tuple(sorted(grid[:, r:r + size, q:q + size].reshape(-1).tolist())) for r in rows for q in cols]


def index_sets(shape: tuple[int, ...], plan: InterventionPlan, seed: int = 0) -> list[tuple[int, ...]]:
    d = int(np.prod(shape))
    if plan.strategy == "single-feature":
        return [(i,) for i in range(d)]
    if plan.strategy == "patch-occlusion":
        return _patch_sets(tuple(shape), plan.patch_size, plan.stride or plan.patch_size)
    rng = np.random.default_rng(seed)
    max_size = min(plan.max_coalition_size or max(1, d // 2), d)
    seen: set[tuple[int, ...]] = set()
    sets: list[tuple[int, ...]] = []
    attempts = 0
    while len(sets) < plan.coalition_count and attempts < 50 * plan.coalition_count:
        attempts += 1
        size = int(rng.integers(1, max_size + 1))
        s = tuple(sorted(rng.choice(d, size=size, replace=False).tolist()))
        if s not in seen:
            seen.add(s)
            sets.append(s)
    covered = set().union(*sets) if sets else set()
    for i in range(d):
        if i not in covered and (i,) not in seen:
            seen.add((i,))
            sets.append((i,))
    return sets


def generate(x: np.ndarray, plan: InterventionPlan, seed: int = 0,
             baseline: float | np.ndarray = 0.0) -> list[Intervention]:
    """Deterministic intervention family for ``x`` covering every feature."""
    x = np.asarray(x, dtype=np.float64)
    b = _baseline_vector(baseline, x.size)
    return [apply(x, s, b) for s in index_sets(x.shape, plan, seed)]


def stack(x: np.ndarray, interventions: Sequence[Intervention]) -> np.ndarray:
    """Batch with the original sample as row 0 followed by every intervened sample."""
    return np.stack([np.asarray(x, dtype=np.float64)] + [iv.sample for iv in interventions])


@dataclass
class IsolationReport:
    changed_only_in_index_set: bool
    repeat_identical: bool
    null_taps_identical: bool
    output_delta: float
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.changed_only_in_index_set and self.repeat_identical and self.null_taps_identical


def check_isolation(model: TappedModel, x: np.ndarray, intervention: Intervention) -> IsolationReport:
    """Runtime check that an intervention is a pure, localized substitution."""
    x = np.asarray(x, dtype=np.float64)
    notes = []
    diff = np.flatnonzero(x.reshape(-1) != intervention.sample.reshape(-1))
    localized = set(diff.tolist()) <= set(intervention.index_set)
    if not localized:
        notes.append(f"features outside I changed: {sorted(set(diff.tolist()) - set(intervention.index_set))}")

    again = apply(x, intervention.index_set, intervention.baseline)
    out1, _ = model.forward(intervention.sample[None])
    out2, _ = model.forward(again.sample[None])
    repeat = bool(np.array_equal(out1, out2) and np.array_equal(again.sample, intervention.sample))
    if not repeat:
        notes.append("re-applying the substitution changed the output")

    null = apply(x, (), intervention.baseline)
    base_out, base_taps = model.forward(x[None])
    _, null_taps = model.forward(null.sample[None])
    null_ok = all(np.array_equal(base_taps[k], null_taps[k]) for k in base_taps)
    if not null_ok:
        notes.append("null intervention altered a tap")
    return IsolationReport(localized, repeat, null_ok, float(np.abs(out1 - base_out).max()), notes)
