"""Local-to-global aggregation of causal graphs and compressed-model derivation."""

from __future__ import annotations

import csv
import json
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tracer.data.dataset import LabeledDataset
from tracer.engine.layers import flops
from tracer.engine.model import TappedModel
from tracer.engine.serialize import model_to_bytes
from tracer.engine.train import accuracy
from tracer.graph import Bridge, CausalGraph, LayerGroup, assemble

BENCHMARK_COLUMNS = ("Model", "θ (M)", "Size (MB)", "FLOPs (M)", "Speed (ms)", "Accuracy (%)")


# --- coverage --------------------------------------------------------------

@dataclass(frozen=True)
class CoverageRow:
    topology: tuple
    node_count: int
    count: int
    coverage: float
    cumulative: float

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        return self.topology[0]


@dataclass
class CoverageTable:
    rows: list[CoverageRow]
    total: int
    tap_layers: list[int]

    def by_node_count(self) -> list[tuple[int, float, float]]:
        """(node count, coverage, cumulative coverage) per distinct node count."""
        counts: Counter[int] = Counter()
        for r in self.rows:
            counts[r.node_count] += r.count
        out, running = [], 0
        for n in sorted(counts):
            running += counts[n]
            out.append((n, counts[n] / self.total, running / self.total))
        return out

    def dominant(self, node_count: int) -> CoverageRow:
        rows = [r for r in self.rows if r.node_count == node_count]
        if not rows:
            raise KeyError(f"no topology with {node_count} nodes")
        return rows[0]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_count", "groups", "links", "count", "coverage", "cumulative"])
            for r in self.rows:
                groups = " ".join("(" + ",".join(map(str, g)) + ")" for g in r.topology[0])
                links = " ".join(f"{s}-{t}:{k[0]}" for s, t, k in r.topology[1])
                w.writerow([r.node_count, groups, links, r.count, f"{r.coverage:.6f}", f"{r.cumulative:.6f}"])

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "tap_layers": self.tap_layers,
            "rows": [{"node_count": r.node_count, "groups": [list(g) for g in r.topology[0]],
                      "links": [list(l) for l in r.topology[1]], "count": r.count,
                      "coverage": r.coverage, "cumulative": r.cumulative} for r in self.rows],
            "by_node_count": [{"node_count": n, "coverage": c, "cumulative": cum}
                              for n, c, cum in self.by_node_count()],
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageTable":
        rows = []
        for r in d["rows"]:
            topo = (tuple(tuple(g) for g in r["groups"]), tuple(tuple(l) for l in r["links"]))
            rows.append(CoverageRow(topo, r["node_count"], r["count"], r["coverage"], r["cumulative"]))
        return cls(rows, d["total"], list(d["tap_layers"]))


def aggregate(graphs: Sequence[CausalGraph]) -> CoverageTable:
    """Coverage of each distinct topology, ordered by node count then coverage."""
    if not graphs:
        raise ValueError("no graphs to aggregate")
    taps = list(graphs[0].tap_layers)
    for i, g in enumerate(graphs):
        if list(g.tap_layers) != taps:
            raise ValueError(f"graph {i} uses tap layers {g.tap_layers}, expected {taps}")
    counts = Counter(g.topology() for g in graphs)
    total = len(graphs)
    ordered = sorted(counts.items(), key=lambda kv: (len(kv[0][0]), -kv[1], repr(kv[0])))
    rows, running = [], 0
    for topo, c in ordered:
        running += c
        rows.append(CoverageRow(topo, len(topo[0]), c, c / total, running / total))
    return CoverageTable(rows, total, taps)


def sample_indices(labels: np.ndarray, count: int, seed: int, stratified: bool = False) -> np.ndarray:
    """Uniform (or class-stratified) random sample of dataset rows, sorted."""
    labels = np.asarray(labels)
    n = len(labels)
    count = min(count, n)
    rng = np.random.default_rng(seed)
    if not stratified:
        return np.sort(rng.choice(n, size=count, replace=False))
    classes = np.unique(labels)
    picked = []
    for i, c in enumerate(classes):
        members = np.flatnonzero(labels == c)
        share = count // len(classes) + (1 if i < count % len(classes) else 0)
        picked.append(rng.choice(members, size=min(share, members.size), replace=False))
    return np.sort(np.concatenate(picked))


# --- compressed architectures ---------------------------------------------

@dataclass
class CompressedModel:
    model: TappedModel
    kept_taps: list[int]
    groups: list[LayerGroup]
    bridges: list[Bridge]
    node_count: int
    coverage: float


def derive_compressed(model: TappedModel, coverage: CoverageTable, target: float,
                      samples: np.ndarray) -> CompressedModel:
    """Keep one representative tap block per group of the dominant topology.

    The node count is the smallest whose cumulative coverage reaches
    ``target``. The head block is always kept and keeps its weights; the
    caller retrains the whole compressed model.
    """
    if not 0.0 < target <= 1.0:
        raise ValueError(f"target coverage must lie in (0, 1], got {target}")
    if list(coverage.tap_layers) != list(model.tap_points):
        raise ValueError(f"coverage table taps {coverage.tap_layers} do not match model taps {model.tap_points}")
    levels = coverage.by_node_count()
    chosen = next(((n, cum) for n, _, cum in levels if cum >= target - 1e-12), None)
    if chosen is None:
        achievable = ", ".join(f"{n} nodes: {cum:.4f}" for n, _, cum in levels)
        raise ValueError(f"target coverage {target} unreachable; achievable: {achievable}")
    node_count, cum = chosen
    row = coverage.dominant(node_count)
    groups = [LayerGroup(i, tuple(m)) for i, m in enumerate(row.groups)]
    L = len(model.tap_points)
    keep = sorted({g.representative for g in groups} | {L - 1})
    compressed, bridges = assemble(model, keep, samples, bridge="shape")
    return CompressedModel(compressed, keep, groups, bridges, node_count, cum)


# --- benchmarking ----------------------------------------------------------

@dataclass
class BenchmarkRow:
    name: str
    parameters: int
    size_bytes: int
    flops: int
    speed_ms: float
    speed_std_ms: float
    accuracy: float

    def row(self) -> list[str]:
        return [self.name, f"{self.parameters / 1e6:.6f}", f"{self.size_bytes / 1e6:.6f}",
                f"{self.flops / 1e6:.6f}", f"{self.speed_ms:.4f} ± {self.speed_std_ms:.4f}",
                f"{100.0 * self.accuracy:.2f}"]

    def static(self) -> dict[str, object]:
        return {"model": self.name, "parameters": self.parameters, "size_bytes": self.size_bytes,
                "flops": self.flops, "accuracy": self.accuracy}


@dataclass
class CompressionReport:
    rows: list[BenchmarkRow] = field(default_factory=list)
    repeats: int = 1000

    def to_csv(self, path: str | Path) -> None:
        """Full benchmark layout, timings included."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BENCHMARK_COLUMNS)
            for r in self.rows:
                w.writerow(r.row())

    def to_json(self, path: str | Path) -> None:
        doc = {"columns": list(BENCHMARK_COLUMNS), "repeats": self.repeats,
               "rows": [dict(zip(BENCHMARK_COLUMNS, r.row())) for r in self.rows]}
        Path(path).write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")

    def static_csv(self, path: str | Path) -> None:
        """Deterministic columns only (no timing)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "parameters", "size_bytes", "flops", "accuracy"])
            for r in self.rows:
                s = r.static()
                w.writerow([s["model"], s["parameters"], s["size_bytes"], s["flops"], f"{s['accuracy']:.6f}"])


def model_flops(model: TappedModel) -> int:
    return int(sum(flops(layer) for layer in model.layers))


def time_inference(model: TappedModel, x: np.ndarray, repeats: int = 1000) -> tuple[float, float]:
    """Mean and std (ms) of single-sample forward passes."""
    batch = np.asarray(x, dtype=np.float64)[None]
    model(batch)
    times = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        model(batch)
        times[i] = time.perf_counter() - t0
    return float(times.mean() * 1e3), float(times.std() * 1e3)


def benchmark(models: Mapping[str, TappedModel], dataset: LabeledDataset,
              repeats: int = 1000) -> CompressionReport:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    report = CompressionReport(repeats=repeats)
    for name, model in models.items():
        mean, std = time_inference(model, dataset.features[0], repeats)
        report.rows.append(BenchmarkRow(
            name=name,
            parameters=model.n_parameters(),
            size_bytes=len(model_to_bytes(model)),
            flops=model_flops(model),
            speed_ms=mean,
            speed_std_ms=std,
            accuracy=accuracy(model, dataset),
        ))
    return report
