"""``tracer`` command-line entry point.

Every subcommand reads its prerequisites from, and writes only into, the run's
output directory. Exit codes: 0 success, 2 invalid config or missing
prerequisite, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from tracer import __version__
from tracer.config import TEMPLATE, ConfigError, RunConfig, load as load_config
from tracer.data.dataset import LabeledDataset, load_digits_dataset, make_blobs
from tracer.data.idx import load_idx
from tracer.data.pgm import write_pgm, write_signed_pgm
from tracer.data.report import canonical_json, encode_tensor, save_report
from tracer.data.tabular import load_csv
from tracer.engine.builders import convnet, mlp
from tracer.engine.model import TappedModel
from tracer.engine.serialize import load_model, save_model
from tracer.engine.train import TrainConfig, accuracy, train_classifier
from tracer.graph import CausalGraph, export_dot, load_graph, save_graph
from tracer.intervention import InterventionPlan, baseline_for

log = logging.getLogger("tracer")

MODEL_FILE = "model.tmodel"
COMPRESSED_FILE = "compressed.tmodel"
CFGAN_FILE = "cfgan.tcf"
COVERAGE_FILE = "coverage.json"
GRAPH_DIR = "graphs"
TIMING_DIR = "timing"


class MissingPrerequisite(Exception):
    def __init__(self, path: Path) -> None:
        super().__init__(f"missing prerequisite: {path}")
        self.path = path


# --- helpers ---------------------------------------------------------------

class Run:
    """Resolved config, output directory and the bookkeeping shared by commands."""

    def __init__(self, config: RunConfig, out: Path, workers: int, command: str) -> None:
        self.config = config
        self.out = out
        self.workers = workers
        self.command = command
        self.written: list[Path] = []

    def path(self, *parts: str) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def require(self, *parts: str) -> Path:
        p = self.out.joinpath(*parts)
        if not p.exists():
            raise MissingPrerequisite(p)
        return p

    def write_json(self, obj: Any, *parts: str) -> Path:
        p = self.path(*parts)
        p.write_text(canonical_json(obj) + "\n", encoding="utf-8")
        return p

    def manifest(self) -> None:
        """Digest-stamped list of this command's outputs (timing files excluded)."""
        entries = {}
        for p in sorted(set(self.written)):
            rel = p.relative_to(self.out).as_posix()
            if rel.startswith(TIMING_DIR + "/") or not p.is_file():
                continue
            entries[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
        doc = {"command": self.command, "config_digest": self.config.digest, "version": __version__,
               "outputs": entries}
        p = self.out / "manifests" / f"{self.command}.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(canonical_json(doc) + "\n", encoding="utf-8")


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; process pool when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_dataset(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    data = cfg["data"]
    kind = data["kind"]
    if kind == "digits":
        ds = load_digits_dataset()
    elif kind == "blobs":
        ds = make_blobs(data["blobs_n"], seed=cfg.seed)
    elif kind == "idx":
        for key in ("idx_images", "idx_labels"):
            if not Path(data[key]).is_file():
                raise MissingPrerequisite(Path(data[key]))
        ds = load_idx(data["idx_images"], data["idx_labels"])
    else:
        if not Path(data["csv_path"]).is_file():
            raise MissingPrerequisite(Path(data["csv_path"]))
        ds = load_csv(data["csv_path"], data["csv_label"])
    return ds.split(data["test_fraction"], cfg.seed)


def build_model(cfg: RunConfig, train: LabeledDataset) -> TappedModel:
    m = cfg["model"]
    arch = m["arch"]
    shape = train.input_shape
    if arch == "auto":
        arch = "convnet" if len(shape) == 3 else "mlp"
    if arch == "convnet":
        if len(shape) != 3:
            raise ConfigError(f"model.arch = convnet needs image inputs, dataset has shape {shape}")
        return convnet(shape, train.class_count, cfg.seed, channels=m["channels"], hidden=m["hidden"])
    return mlp(int(np.prod(shape)), m["hidden"], train.class_count, cfg.seed)


def explain_settings(cfg: RunConfig):
    from tracer.pipeline import ExplainSettings

    e = cfg["explain"]
    plan = InterventionPlan(strategy=e["strategy"], patch_size=e["patch_size"], stride=e["stride"],
                            coalition_count=e["coalition_count"],
                            max_coalition_size=e["max_coalition_size"], baseline=e["baseline"])
    return ExplainSettings(plan, e["epsilon"], e["kernel"], cfg.seed, e["top_features"], e["find_mask"])


def _baseline(cfg: RunConfig, train: LabeledDataset) -> np.ndarray:
    settings = explain_settings(cfg)
    return baseline_for(settings.plan, train.features, train.input_shape)


def _clean(obj: Any) -> Any:
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# --- per-sample workers (module level so they pickle) ------------------------

def _explain_job(args: tuple) -> Any:
    from tracer.pipeline import explain_sample

    model, x, settings, baseline, names = args
    return explain_sample(model, x, settings, baseline, names)


def _graph_job(args: tuple) -> CausalGraph:
    from tracer.pipeline import analyze

    model, x, settings, baseline = args
    return analyze(model, x, settings, baseline)[2]


# --- subcommands -------------------------------------------------------------

def cmd_train(run: Run) -> None:
    cfg = run.config
    train, test = load_dataset(cfg)
    model = build_model(cfg, train)
    m = cfg["model"]
    result = train_classifier(model, train, TrainConfig(cfg.seed, m["epochs"], m["batch_size"], m["lr"]))
    save_model(result.model, run.path(MODEL_FILE), seed=cfg.seed, extra={"config_digest": cfg.digest})
    run.write_json(_clean({
        "config_digest": cfg.digest,
        "train_accuracy": accuracy(result.model, train),
        "test_accuracy": accuracy(result.model, test),
        "parameters": result.model.n_parameters(),
        "history": result.history,
    }), "train.json")
    print(f"test accuracy {accuracy(result.model, test):.4f}")


def _write_explanation(run: Run, expl, sample_id: str, test: LabeledDataset, feature_names) -> None:
    from tracer.pipeline import to_report
    from tracer import plotting

    report = to_report(expl, sample_id, run.config.digest, test.normalization, feature_names)
    save_report(report, run.path("explain", sample_id, "report.json"))
    save_graph(expl.graph, run.path("explain", sample_id, "graph.json"))
    run.path("explain", sample_id, "graph.dot").write_text(export_dot(expl.graph), encoding="utf-8")
    expl.cka.to_csv(run.path("explain", sample_id, "cka.csv"))
    expl.cka.to_pgm(run.path("explain", sample_id, "cka.pgm"))
    shape = expl.x.shape
    img = expl.x if len(shape) != 3 else expl.x.mean(axis=0)
    write_pgm(run.path("explain", sample_id, "input.pgm"), np.atleast_2d(img), 0.0, 1.0)
    agg = expl.attribution.aggregate_map()
    agg2d = np.atleast_2d(agg if agg.ndim != 3 else agg.mean(axis=0))
    for p in write_signed_pgm(run.out / "explain" / sample_id / "attribution", agg2d):
        run.written.append(p)
    if expl.mask is not None:
        m = expl.mask.mask
        write_pgm(run.path("explain", sample_id, "mask.pgm"), np.atleast_2d(m if m.ndim != 3 else m.max(axis=0)), 0.0, 1.0)
    maps = {"aggregate": agg}
    maps.update({f"G{g + 1}": expl.attribution.node_map(g) for g in expl.attribution.node_ids})
    plotting.attribution_figure(expl.x, maps, run.path("explain", sample_id, "attribution.png"), feature_names)
    plotting.cka_heatmap(expl.cka.values, expl.cka.labels, run.path("explain", sample_id, "cka.png"),
                         expl.cka.epsilon)


def cmd_explain(run: Run) -> None:
    cfg = run.config
    model = load_model(run.require(MODEL_FILE))
    train, test = load_dataset(cfg)
    settings = explain_settings(cfg)
    baseline = _baseline(cfg, train)
    count = min(cfg["explain"]["samples"], len(test))
    names = test.feature_names
    jobs = [(model, test.features[i], settings, baseline, names) for i in range(count)]
    results = _pmap(_explain_job, jobs, run.workers)
    summary = []
    for i, expl in enumerate(results):
        sid = f"sample_{i:04d}"
        _write_explanation(run, expl, sid, test, names)
        summary.append({"sample": sid, "label": int(test.labels[i]), "predicted": expl.predicted,
                        "nodes": expl.graph.node_count,
                        "mask_size": expl.mask.size if expl.mask is not None else None,
                        "mask_minimal": expl.mask.minimal if expl.mask is not None else None})
    run.write_json({"config_digest": cfg.digest, "samples": summary}, "explain", "summary.json")
    print(f"explained {count} samples into {run.out / 'explain'}")


def _global_sample(cfg: RunConfig, test: LabeledDataset) -> np.ndarray:
    from tracer.compress import sample_indices

    g = cfg["global"]
    return sample_indices(test.labels, g["samples"], cfg.seed, g["stratified"])


def cmd_graph(run: Run) -> None:
    cfg = run.config
    model = load_model(run.require(MODEL_FILE))
    train, test = load_dataset(cfg)
    settings = explain_settings(cfg)
    baseline = _baseline(cfg, train)
    idx = _global_sample(cfg, test)
    graphs = _pmap(_graph_job, [(model, test.features[i], settings, baseline) for i in idx], run.workers)
    for i, g in zip(idx, graphs):
        save_graph(g, run.path(GRAPH_DIR, f"graph_{int(i):05d}.json"))
        run.path(GRAPH_DIR, f"graph_{int(i):05d}.dot").write_text(export_dot(g), encoding="utf-8")
    run.write_json({"config_digest": cfg.digest, "samples": [int(i) for i in idx]}, GRAPH_DIR, "index.json")
    print(f"wrote {len(graphs)} causal graphs into {run.out / GRAPH_DIR}")


def cmd_aggregate(run: Run) -> None:
    from tracer import plotting
    from tracer.compress import aggregate

    index = json.loads(run.require(GRAPH_DIR, "index.json").read_text(encoding="utf-8"))
    graphs = [load_graph(run.require(GRAPH_DIR, f"graph_{i:05d}.json")) for i in index["samples"]]
    table = aggregate(graphs)
    table.to_csv(run.path("coverage.csv"))
    run.write_json(dict(table.to_dict(), config_digest=run.config.digest), COVERAGE_FILE)
    plotting.coverage_plot(table.by_node_count(), run.path("coverage.png"))
    for n, c, cum in table.by_node_count():
        print(f"{n} nodes: coverage {c:.3f}, cumulative {cum:.3f}")


def cmd_compress(run: Run) -> None:
    from tracer.compress import CoverageTable, derive_compressed

    cfg = run.config
    model = load_model(run.require(MODEL_FILE))
    table = CoverageTable.from_dict(json.loads(run.require(COVERAGE_FILE).read_text(encoding="utf-8")))
    train, test = load_dataset(cfg)
    derived = derive_compressed(model, table, cfg["global"]["target_coverage"], train.features[:256])
    m = cfg["model"]
    retrained = train_classifier(derived.model, train, TrainConfig(cfg.seed, m["epochs"], m["batch_size"], m["lr"]))
    save_model(retrained.model, run.path(COMPRESSED_FILE), seed=cfg.seed, extra={"config_digest": cfg.digest})
    run.write_json({
        "config_digest": cfg.digest,
        "node_count": derived.node_count,
        "coverage": derived.coverage,
        "groups": [list(g.members) for g in derived.groups],
        "kept_taps": derived.kept_taps,
        "bridges": [{"after_tap": b.after_tap, "to_tap": b.to_tap, "kind": b.kind} for b in derived.bridges],
        "parameters": {"original": model.n_parameters(), "compressed": retrained.model.n_parameters()},
        "test_accuracy": {"original": accuracy(model, test), "compressed": accuracy(retrained.model, test)},
    }, "compress.json")
    print(f"compressed {model.n_parameters()} -> {retrained.model.n_parameters()} parameters")


def cmd_benchmark(run: Run) -> None:
    from tracer.compress import benchmark

    cfg = run.config
    models = {"original": load_model(run.require(MODEL_FILE))}
    compressed = run.out / COMPRESSED_FILE
    if compressed.exists():
        models["compressed"] = load_model(compressed)
    _, test = load_dataset(cfg)
    report = benchmark(models, test, cfg["global"]["repeats"])
    report.static_csv(run.path("benchmark.csv"))
    report.to_csv(run.path(TIMING_DIR, "benchmark_full.csv"))
    report.to_json(run.path(TIMING_DIR, "benchmark_full.json"))
    with open(run.out / TIMING_DIR / "benchmark_full.csv", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())


def cmd_cf_train(run: Run) -> None:
    from tracer import plotting
    from tracer.counterfactual import CfGanConfig, CfLossConfig, save_generator, train_cf_gan

    cfg = run.config
    classifier = load_model(run.require(MODEL_FILE))
    train, _ = load_dataset(cfg)
    c = cfg["counterfactual"]
    gan_cfg = CfGanConfig(seed=cfg.seed, loss=CfLossConfig(c["lambda"], c["metric"], c["sigma"]), rho=c["rho"],
                          steps=c["steps"], batch_size=c["batch_size"], lr=c["lr"], latent=c["latent"],
                          hidden=c["hidden"])
    gen = train_cf_gan(train, classifier, gan_cfg)
    save_generator(gen, run.path(CFGAN_FILE), extra={"config_digest": cfg.digest})
    keys = ["proximity", "adversarial", "discriminator", "total", "validity"]
    with open(run.path("cf_curve.csv"), "w", encoding="utf-8") as fh:
        fh.write("step," + ",".join(keys) + "\n")
        for entry in gen.curve:
            vals = [entry.get(k, float("nan")) for k in keys]
            fh.write(f"{int(entry['step'])}," + ",".join("" if math.isnan(v) else f"{v:.8f}" for v in vals) + "\n")
    plotting.training_curve(gen.curve, keys, run.path("cf_curve.png"))
    first, last = gen.curve[0]["proximity"], gen.curve[-1]["proximity"]
    print(f"proximity {first:.4f} -> {last:.4f}")


def cmd_cf_generate(run: Run) -> None:
    from tracer import plotting
    from tracer.counterfactual import contrastive_report, generate, load_generator

    cfg = run.config
    classifier = load_model(run.require(MODEL_FILE))
    gen = load_generator(run.require(CFGAN_FILE))
    train, test = load_dataset(cfg)
    c = cfg["counterfactual"]
    settings = explain_settings(cfg)
    baseline = _baseline(cfg, train)
    preds = classifier.predict(test.features)
    wrong = np.flatnonzero(preds != test.labels)
    right = np.flatnonzero(preds == test.labels)
    chosen = list(wrong[:c["samples"]]) + list(right[:max(0, c["samples"] - len(wrong))])
    rows = []
    for n, i in enumerate(chosen):
        i = int(i)
        x = test.features[i]
        misclassified = preds[i] != test.labels[i]
        # a misclassified input asks for its true label; otherwise the next class
        target = int(test.labels[i]) if misclassified else int((preds[i] + 1) % test.class_count)
        outs = generate(gen, x, target, c["count"], c["sigma"], seed=cfg.seed + n)
        out_preds = classifier.predict(outs)
        sid = f"sample_{i:05d}"
        run.write_json({
            "config_digest": cfg.digest, "sample": i, "label": int(test.labels[i]), "predicted": int(preds[i]),
            "target": target, "counterfactuals": [encode_tensor(o) for o in outs],
            "predictions": [int(p) for p in out_preds],
        }, "counterfactuals", f"{sid}.json")
        plotting.counterfactual_figure(x, outs[0], run.path("counterfactuals", f"{sid}.png"))
        if misclassified:
            report = contrastive_report(classifier, x, outs[0], target, settings, baseline, test.feature_names)
            report.save(run.path("counterfactuals", f"{sid}_contrastive.json"))
            diff = report.difference
            for p in write_signed_pgm(run.out / "counterfactuals" / f"{sid}_difference",
                                      np.atleast_2d(diff if diff.ndim != 3 else diff.mean(axis=0))):
                run.written.append(p)
        for k, (o, p) in enumerate(zip(outs, out_preds)):
            rows.append((i, int(test.labels[i]), int(preds[i]), target, k, int(p),
                         float(np.linalg.norm((o - x).reshape(-1)))))
    with open(run.path("counterfactuals.csv"), "w", encoding="utf-8") as fh:
        fh.write("sample,label,predicted,target,draw,cf_predicted,l2_distance\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r[:-1]) + f",{r[-1]:.8f}\n")
    valid = np.mean([r[5] == r[3] for r in rows]) if rows else float("nan")
    print(f"{len(rows)} counterfactuals, {valid:.3f} reach their target class")


def cmd_reliability(run: Run) -> None:
    from tracer import plotting
    from tracer.evaluation import PerturbationSpec, compare

    cfg = run.config
    model = load_model(run.require(MODEL_FILE))
    train, test = load_dataset(cfg)
    r = cfg["reliability"]
    count = min(r["samples"], len(test))
    subset = test.subset(np.arange(count))
    settings = explain_settings(cfg)
    from dataclasses import replace

    settings = replace(settings, find_mask=True)
    baseline = _baseline(cfg, train)
    expls = _pmap(_explain_job, [(model, x, settings, baseline, None) for x in subset.features], run.workers)
    masks = np.stack([e.mask.mask for e in expls])
    spec = PerturbationSpec(r["p"], r["mode"], r["noise_scale"], cfg.seed)
    table = compare(model, subset, {"tracer": masks}, spec, r["trials"], random_for="tracer", baseline=baseline)
    table.to_csv(run.path("reliability.csv"))
    doc = json.loads(json.dumps({"config_digest": cfg.digest, "excluded": table.excluded,
                                 "methods": [dict(row, scores=table.results[row["method"]].scores)
                                             for row in table.rows()]}))
    run.write_json(_clean(doc), "reliability.json")
    plotting.reliability_bars(table.rows(), run.path("reliability.png"))
    for row in table.rows():
        print(f"{row['method']}: S = {row['mean']:.3f} ± {row['std']:.3f}")


COMMANDS: dict[str, tuple[Callable[[Run], None], str]] = {
    "train": (cmd_train, "train the classifier"),
    "explain": (cmd_explain, "explain test samples (report, graph, heatmaps)"),
    "graph": (cmd_graph, "causal graphs for the global sample set"),
    "cf-train": (cmd_cf_train, "train the counterfactual generator"),
    "cf-generate": (cmd_cf_generate, "generate counterfactuals and contrastive reports"),
    "reliability": (cmd_reliability, "reliability of explanation masks vs random masks"),
    "aggregate": (cmd_aggregate, "coverage table over the saved causal graphs"),
    "compress": (cmd_compress, "derive and retrain a compressed model"),
    "benchmark": (cmd_benchmark, "benchmark original and compressed models"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: $TRACER_OUT)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override run.seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="worker processes (default: available cores; 1 = sequential)")
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="tracer", parents=[common],
                                     description="Causal explanations for small neural classifiers.")
    parser.add_argument("--version", action="version", version=f"tracer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    init = sub.add_parser("init", help="write a configuration template with all defaults")
    init.add_argument("path", help="where to write the template")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return int(exc.code or 0)
    opts = vars(args)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "init":
        path = Path(args.path)
        if path.exists():
            print(f"error: {path} already exists", file=sys.stderr)
            return 2
        path.write_text(TEMPLATE, encoding="utf-8")
        return 0
    try:
        seed = opts.get("seed")
        if seed is not None and seed < 0:
            raise ConfigError("--seed must be non-negative")
        try:
            cfg = load_config(opts.get("config"), seed=seed)
        except FileNotFoundError as exc:
            raise MissingPrerequisite(Path(str(exc))) from None
        out = opts.get("out") or os.environ.get("TRACER_OUT")
        if not out:
            raise ConfigError("no output directory: pass --out or set TRACER_OUT")
        workers = opts.get("workers")
        if workers is None:
            workers = os.cpu_count() or 1
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, out_dir, workers, args.command)
        COMMANDS[args.command][0](run)
        run.manifest()
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingPrerequisite as exc:
        print(f"error: missing prerequisite: {exc.path}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        if opts.get("verbose"):
            log.exception("command failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
