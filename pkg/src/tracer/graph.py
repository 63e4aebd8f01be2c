"""Layer groups (causal nodes), causal links, model collapsing and graph export.

Group members are *tap positions* (0..L-1 in tap order), not raw layer
indices; ``CausalGraph.tap_layers`` maps positions back to the model.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from tracer.data.report import read_document, write_document
from tracer.engine.layers import Dense, Flatten, Layer, Reshape
from tracer.engine.model import TappedModel

GRAPH_VERSION = "tracer-graph/1"


@dataclass(frozen=True)
class LayerGroup:
    id: int
    members: tuple[int, ...]

    @property
    def representative(self) -> int:
        return self.members[0]

    @property
    def first(self) -> int:
        return self.members[0]

    @property
    def last(self) -> int:
        return self.members[-1]


@dataclass(frozen=True)
class Link:
    source: int
    target: int
    kind: str  # "adjacency" | "similarity"


def group_layers(B: np.ndarray) -> list[LayerGroup]:
    """Maximal runs of consecutive taps whose neighbouring pairs all have B == 1."""
    B = np.asarray(B)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"B must be square, got {B.shape}")
    L = B.shape[0]
    if L == 0:
        return []
    runs = [[0]]
    for i in range(1, L):
        if B[i - 1, i] == 1:
            runs[-1].append(i)
        else:
            runs.append([i])
    return [LayerGroup(g, tuple(r)) for g, r in enumerate(runs)]


def link_groups(groups: Sequence[LayerGroup], B: np.ndarray) -> list[Link]:
    B = np.asarray(B)
    links = [Link(a, a + 1, "adjacency") for a in range(len(groups) - 1)]
    for a in range(len(groups)):
        for b in range(a + 2, len(groups)):
            if np.any(B[np.ix_(groups[a].members, groups[b].members)] == 1):
                links.append(Link(a, b, "similarity"))
    return sorted(links, key=lambda l: (l.source, l.target))


def collapse_binary(B: np.ndarray, groups: Sequence[LayerGroup]) -> np.ndarray:
    """Group-level B: neighbours judged at their junction, others by any cross pair."""
    B = np.asarray(B)
    G = len(groups)
    out = np.eye(G, dtype=np.int8)
    for a in range(G):
        for b in range(a + 1, G):
            if b == a + 1:
                v = B[groups[a].last, groups[b].first]
            else:
                v = int(np.any(B[np.ix_(groups[a].members, groups[b].members)] == 1))
            out[a, b] = out[b, a] = v
    return out


@dataclass
class CausalGraph:
    groups: list[LayerGroup]
    links: list[Link]
    tap_layers: list[int]
    layer_names: list[str]
    annotations: dict[int, list[tuple[str, float]]] = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.groups)

    def topology(self) -> tuple:
        """Structure key: group boundaries and link kinds (annotations ignored)."""
        return (tuple(g.members for g in self.groups),
                tuple((l.source, l.target, l.kind) for l in self.links))

    def same_structure(self, other: "CausalGraph") -> bool:
        return self.topology() == other.topology()

    def to_dict(self) -> dict[str, Any]:
        return {
            "tap_layers": list(self.tap_layers),
            "layer_names": list(self.layer_names),
            "nodes": [{"id": g.id, "members": list(g.members),
                       "annotations": [[n, float(s)] for n, s in self.annotations.get(g.id, [])]}
                      for g in self.groups],
            "links": [{"source": l.source, "target": l.target, "kind": l.kind} for l in self.links],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CausalGraph":
        groups = [LayerGroup(n["id"], tuple(n["members"])) for n in d["nodes"]]
        ann = {n["id"]: [(a, float(s)) for a, s in n["annotations"]] for n in d["nodes"] if n["annotations"]}
        links = [Link(l["source"], l["target"], l["kind"]) for l in d["links"]]
        return cls(groups, links, list(d["tap_layers"]), list(d["layer_names"]), ann)


def build_graph(B: np.ndarray, model: TappedModel | None = None) -> CausalGraph:
    groups = group_layers(B)
    links = link_groups(groups, B)
    L = np.asarray(B).shape[0]
    if model is not None:
        tap_layers = list(model.tap_points)
        names = [f"L{t}:{model.layers[t].kind}" for t in tap_layers]
    else:
        tap_layers = list(range(L))
        names = [f"T{i}" for i in range(L)]
    return CausalGraph(groups, links, tap_layers, names)


def annotate(graph: CausalGraph, node_scores: dict[int, np.ndarray],
             feature_names: Sequence[str] | None = None, top: int = 3) -> CausalGraph:
    """Attach the ``top`` features by |score| (signed) to each node."""
    for gid, scores in node_scores.items():
        flat = np.asarray(scores, dtype=np.float64).reshape(-1)
        order = np.argsort(-np.abs(flat), kind="stable")[:top]
        names = feature_names or [f"f{i}" for i in range(flat.size)]
        graph.annotations[gid] = [(names[i], float(flat[i])) for i in order if flat[i] != 0.0]
    return graph


def export_dot(graph: CausalGraph) -> str:
    lines = ["digraph causal_graph {", "  rankdir=LR;", "  node [shape=box, fontname=Helvetica];",
             '  input [label="input", shape=ellipse];']
    for g in graph.groups:
        members = ", ".join(graph.layer_names[m] for m in g.members)
        label = f"G{g.id + 1}\\n{members}"
        for name, score in graph.annotations.get(g.id, []):
            label += f"\\n{name}: {score:+.4g}"
        lines.append(f'  g{g.id} [label="{label}"];')
    lines.append('  output [label="output", shape=ellipse];')
    if graph.groups:
        lines.append("  input -> g0;")
    for l in graph.links:
        style = "solid" if l.kind == "adjacency" else "dashed"
        lines.append(f"  g{l.source} -> g{l.target} [style={style}];")
    if graph.groups:
        lines.append(f"  g{graph.groups[-1].id} -> output;")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_graph(graph: CausalGraph, path: str | Path) -> None:
    write_document(path, GRAPH_VERSION, graph.to_dict())


def load_graph(path: str | Path) -> CausalGraph:
    return CausalGraph.from_dict(read_document(path, GRAPH_VERSION))


# --- collapsing groups into representative layers -------------------------

def tap_blocks(model: TappedModel) -> list[list[int]]:
    """Layer indices ending at each tap (the layers between consecutive taps)."""
    blocks, start = [], 0
    for t in model.tap_points:
        blocks.append(list(range(start, t + 1)))
        start = t + 1
    return blocks


def _fit_bridge(src: np.ndarray, dst: np.ndarray) -> list[Layer]:
    """Least-squares affine map from flattened ``src`` activations to ``dst``."""
    n = src.shape[0]
    a = src.reshape(n, -1)
    t = dst.reshape(n, -1)
    design = np.hstack([a, np.ones((n, 1))])
    coef, *_ = np.linalg.lstsq(design, t, rcond=None)
    dense = Dense(a.shape[1], t.shape[1])
    dense.params["W"] = coef[:-1].copy()
    dense.params["b"] = coef[-1].copy()
    layers: list[Layer] = []
    if src.ndim > 2:
        layers.append(Flatten())
    layers.append(dense)
    if dst.ndim > 2:
        layers.append(Reshape(dst.shape[1:]))
    return layers


@dataclass
class Bridge:
    after_tap: int
    to_tap: int
    kind: str  # "identity" | "least-squares"


def assemble(model: TappedModel, keep: Sequence[int], samples: np.ndarray,
             bridge: str = "fit") -> tuple[TappedModel, list[Bridge]]:
    """Model that keeps only the tap blocks listed in ``keep`` (tap positions).

    Where a kept block is not fed by its original predecessor, a bridge maps
    the last kept output to the activation the block expects. ``bridge="fit"``
    uses identity only when activations match exactly on ``samples``;
    ``bridge="shape"`` uses identity whenever shapes match.
    """
    keep = sorted(set(int(k) for k in keep))
    blocks = tap_blocks(model)
    L = len(blocks)
    if not keep or keep[0] != 0:
        raise ValueError("the first tap block must be kept")
    _, taps = model.forward(samples)
    acts = [taps[t] for t in model.tap_points]
    layers: list[Layer] = []
    bridges: list[Bridge] = []

    def connect(prev: int, needed: int) -> None:
        if prev == needed:
            return
        src, dst = acts[prev], acts[needed]
        same_shape = src.shape == dst.shape
        if same_shape and (bridge == "shape" or np.array_equal(src, dst)):
            bridges.append(Bridge(prev, needed, "identity"))
            return
        layers.extend(_fit_bridge(src, dst))
        bridges.append(Bridge(prev, needed, "least-squares"))

    prev = None
    for k in keep:
        if prev is not None:
            connect(prev, k - 1)
        layers.extend(model.layers[i] for i in blocks[k])
        prev = k
    connect(prev, L - 1)
    trailing = range(model.tap_points[-1] + 1, len(model.layers)) if model.tap_points else ()
    layers.extend(model.layers[i] for i in trailing)
    layers = [copy.deepcopy(layer) for layer in layers]
    return TappedModel(layers, model.input_shape), bridges


@dataclass
class CompositeReport:
    per_group: dict[int, float]
    overall: float
    bridges: list[Bridge]
    errors: list[str] = field(default_factory=list)


def composite_check(model: TappedModel, groups: Sequence[LayerGroup], samples: np.ndarray,
                    eval_samples: np.ndarray | None = None) -> CompositeReport:
    """Prediction agreement when each multi-member group collapses to its representative."""
    eval_samples = samples if eval_samples is None else eval_samples
    reference = model.predict(eval_samples)
    all_taps = set(range(len(model.tap_points)))
    per_group: dict[int, float] = {}
    errors: list[str] = []
    for g in groups:
        if len(g.members) == 1:
            continue
        keep = all_taps - set(g.members[1:])
        try:
            reduced, _ = assemble(model, sorted(keep), samples)
            per_group[g.id] = float((reduced.predict(eval_samples) == reference).mean())
        except ValueError as exc:
            errors.append(f"group {g.id}: {exc}")
    keep_all = [g.representative for g in groups]
    try:
        reduced, bridges = assemble(model, keep_all, samples)
        overall = float((reduced.predict(eval_samples) == reference).mean())
    except ValueError as exc:
        errors.append(f"all groups: {exc}")
        overall, bridges = float("nan"), []
    return CompositeReport(per_group, overall, bridges, errors)
