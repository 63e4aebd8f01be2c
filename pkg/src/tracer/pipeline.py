"""Per-sample analysis: interventions -> CKA -> causal graph -> ACE -> mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tracer.attribution import AttributionMap, ExplanationMask, ace, find_minimal_mask
from tracer.data.dataset import Normalization
from tracer.data.report import ExplanationReport, encode_tensor
from tracer.engine.model import TappedModel
from tracer.graph import CausalGraph, annotate, build_graph
from tracer.intervention import Intervention, InterventionPlan, generate, stack
from tracer.similarity import CkaMatrix, build_cka_matrix


@dataclass(frozen=True)
class ExplainSettings:
    plan: InterventionPlan = InterventionPlan()
    epsilon: float = 0.05
    kernel: str = "linear"
    seed: int = 0
    top_features: int = 3
    find_mask: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass
class Explanation:
    x: np.ndarray
    predicted: int
    interventions: list[Intervention]
    cka: CkaMatrix
    graph: CausalGraph
    attribution: AttributionMap
    mask: ExplanationMask | None


def analyze(model: TappedModel, x: np.ndarray, settings: ExplainSettings,
            baseline: float | np.ndarray) -> tuple[list[Intervention], CkaMatrix, CausalGraph]:
    """Causal discovery only: intervention family, CKA matrix and graph."""
    interventions = generate(x, settings.plan, seed=settings.seed, baseline=baseline)
    _, taps = model.forward(stack(x, interventions))
    cka = build_cka_matrix(taps, settings.epsilon, settings.kernel)
    return interventions, cka, build_graph(cka.binary, model)


def explain_sample(model: TappedModel, x: np.ndarray, settings: ExplainSettings,
                   baseline: float | np.ndarray,
                   feature_names: Sequence[str] | None = None) -> Explanation:
    x = np.asarray(x, dtype=np.float64)
    interventions, cka, graph = analyze(model, x, settings, baseline)
    attribution = ace(model, graph.groups, x, interventions)
    node_scores = {gid: attribution.node_effects[i] for i, gid in enumerate(attribution.node_ids)}
    annotate(graph, node_scores, feature_names, top=settings.top_features)
    mask = None
    if settings.find_mask:
        mask = find_minimal_mask(model, x, attribution.predicted, attribution)
    return Explanation(x, attribution.predicted, interventions, cka, graph, attribution, mask)


def to_report(expl: Explanation, sample_id: str, config_digest: str,
              normalization: Normalization | None = None,
              feature_names: Sequence[str] | None = None) -> ExplanationReport:
    raw_input = normalization.denormalize(expl.x) if normalization is not None else expl.x
    cka_values = [[None if np.isnan(v) else float(v) for v in row] for row in expl.cka.values]
    metadata = {
        "input": encode_tensor(raw_input),
        "node_effects": {f"G{g + 1}": encode_tensor(expl.attribution.node_map(g))
                         for g in expl.attribution.node_ids},
        "cka": cka_values,
        "epsilon": expl.cka.epsilon,
        "interventions": len(expl.interventions),
    }
    if feature_names is not None:
        metadata["feature_names"] = list(feature_names)
    if expl.mask is not None:
        metadata["mask_minimal"] = expl.mask.minimal
        metadata["mask_certificate"] = [[int(e), int(l)] for e, l in expl.mask.certificate]
    mask = expl.mask.mask if expl.mask is not None else np.ones_like(expl.x)
    return ExplanationReport(
        sample_id=sample_id,
        predicted=expl.predicted,
        attribution=expl.attribution.aggregate_map(),
        mask=mask,
        ace=expl.attribution.ace_by_node(),
        graph=expl.graph.to_dict(),
        config_digest=config_digest,
        metadata=metadata,
    )
