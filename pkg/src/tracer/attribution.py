"""KL-based causal effects per causal node and minimal explanation masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tracer.engine.layers import Softmax, softmax
from tracer.engine.model import TappedModel
from tracer.graph import LayerGroup
from tracer.intervention import Intervention, stack

SMOOTHING = 1e-12


def node_distribution(acts: np.ndarray) -> np.ndarray:
    """Softmax over each flattened row, smoothed so every entry is positive."""
    a = np.asarray(acts, dtype=np.float64)
    single = a.ndim == 1
    rows = a.reshape(1, -1) if single else a.reshape(a.shape[0], -1)
    p = softmax(rows, axis=1) + SMOOTHING
    p = p / p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for strictly positive distributions of equal length."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("distributions must be strictly positive")
    return float(np.sum(p * np.log(p / q)))


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sum(p * np.log(p / q[None, :]), axis=1)


@dataclass
class AttributionMap:
    """Signed per-feature effects for every causal node plus their aggregate.

    Positive values mark features whose removal lowered the predicted class
    probability (they supported the decision).
    """

    shape: tuple[int, ...]
    node_ids: list[int]
    node_effects: np.ndarray  # G x d, signed (sign * KL)
    node_raw: np.ndarray  # G x d, |delta| * KL
    aggregate: np.ndarray  # d
    element_effects: np.ndarray  # G x J, signed per intervention
    index_sets: list[tuple[int, ...]]
    ace: np.ndarray  # G, mean over interventions of |delta| * KL
    predicted: int

    def aggregate_map(self) -> np.ndarray:
        return self.aggregate.reshape(self.shape)

    def node_map(self, node: int) -> np.ndarray:
        return self.node_effects[self.node_ids.index(node)].reshape(self.shape)

    def ace_by_node(self) -> dict[str, float]:
        return {f"G{g + 1}": float(v) for g, v in zip(self.node_ids, self.ace)}


def _class_probs(model: TappedModel, final: np.ndarray) -> np.ndarray:
    rows = final.reshape(final.shape[0], -1)
    if model.layers and isinstance(model.layers[-1], Softmax):
        return rows
    return softmax(rows, axis=1)


def ace(model: TappedModel, groups: Sequence[LayerGroup], x: np.ndarray,
        interventions: Sequence[Intervention]) -> AttributionMap:
    """Causal effect of every intervention on every causal node.

    Each node is read at its last member tap. The per-intervention magnitude
    is KL(node dist under x' || node dist under x); the sign comes from the
    change of the predicted-class probability at the output.
    """
    x = np.asarray(x, dtype=np.float64)
    if not interventions:
        raise ValueError("at least one intervention is required")
    batch = stack(x, interventions)
    final, taps = model.forward(batch)
    probs = _class_probs(model, final)
    predicted = int(np.argmax(probs[0]))
    drop = probs[0, predicted] - probs[1:, predicted]
    sign = np.where(drop >= 0, 1.0, -1.0)

    d = x.size
    J = len(interventions)
    membership = np.zeros((J, d))
    for j, iv in enumerate(interventions):
        membership[j, list(iv.index_set)] = 1.0
    counts = membership.sum(axis=0)
    safe = np.where(counts > 0, counts, 1.0)

    G = len(groups)
    signed = np.zeros((G, J))
    raw = np.zeros((G, J))
    for gi, g in enumerate(groups):
        acts = taps[model.tap_points[g.last]]
        rows = acts.reshape(acts.shape[0], -1)
        same = np.all(rows[1:] == rows[0], axis=1)
        dist = node_distribution(rows)
        k = _kl_rows(dist[1:], dist[0])
        delta = np.abs(dist[0][None, :] - dist[1:]).sum(axis=1)
        k = np.where(same, 0.0, np.maximum(k, 0.0))
        delta = np.where(same, 0.0, delta)
        signed[gi] = sign * k
        raw[gi] = delta * k
    node_effects = (signed @ membership) / safe
    node_raw = (raw @ membership) / safe
    return AttributionMap(
        shape=tuple(x.shape),
        node_ids=[g.id for g in groups],
        node_effects=node_effects,
        node_raw=node_raw,
        aggregate=node_effects.mean(axis=0) if G else np.zeros(d),
        element_effects=signed,
        index_sets=[iv.index_set for iv in interventions],
        ace=raw.mean(axis=1),
        predicted=predicted,
    )


@dataclass
class ExplanationMask:
    mask: np.ndarray  # binary, shape of x
    sufficient: bool
    certificate: list[tuple[int, int]] = field(default_factory=list)  # (element, label after removal)
    elements: list[tuple[int, ...]] = field(default_factory=list)
    active: list[int] = field(default_factory=list)

    @property
    def minimal(self) -> bool:
        """1-minimal: dropping any single active element changed the prediction."""
        return len(self.certificate) == len(self.active)

    @property
    def size(self) -> int:
        return int(self.mask.sum())


def find_minimal_mask(model: TappedModel, x: np.ndarray, y: int,
                      attribution: AttributionMap | np.ndarray | None = None,
                      elements: Sequence[Sequence[int]] | None = None) -> ExplanationMask:
    """Greedy backward elimination of the least relevant elements.

    Elements (single features or patches) are removed in ascending order of
    mean |aggregate attribution| while ``model(M * x) == y`` holds, until no
    single removal preserves the label.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    if int(model.predict(x[None])[0]) != int(y):
        raise ValueError(f"model(x) != y ({int(model.predict(x[None])[0])} vs {y}); C1 fails")
    if elements is None:
        if isinstance(attribution, AttributionMap) and _is_partition(attribution.index_sets, d):
            elements = attribution.index_sets
        else:
            elements = [(i,) for i in range(d)]
    elements = [tuple(int(i) for i in e) for e in elements]
    if isinstance(attribution, AttributionMap):
        scores = np.abs(attribution.aggregate)
    elif attribution is not None:
        scores = np.abs(np.asarray(attribution, dtype=np.float64).reshape(-1))
    else:
        scores = np.zeros(d)
    order = sorted(range(len(elements)), key=lambda e: (float(scores[list(elements[e])].mean()), e))

    flat = x.reshape(-1)
    mask = np.ones(d)
    active = set(range(len(elements)))

    def label_without(e: int) -> int:
        trial = mask.copy()
        trial[list(elements[e])] = 0.0
        return int(model.predict((trial * flat).reshape((1,) + x.shape))[0])

    changed = True
    while changed:
        changed = False
        for e in order:
            if e in active and label_without(e) == y:
                mask[list(elements[e])] = 0.0
                active.discard(e)
                changed = True
    sufficient = int(model.predict((mask * flat).reshape((1,) + x.shape))[0]) == int(y)
    assert sufficient, "greedy elimination lost sufficiency"
    certificate = []
    for e in sorted(active):
        label = label_without(e)
        if label != y:
            certificate.append((e, label))
    return ExplanationMask(mask.reshape(x.shape), sufficient, certificate, elements, sorted(active))


def _is_partition(sets: Sequence[Sequence[int]], d: int) -> bool:
    seen = np.zeros(d, dtype=int)
    for s in sets:
        seen[list(s)] += 1
    return bool(np.all(seen == 1))
