"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import itertools
import json
import time

import numpy as np
import pytest

from gradcheck import TOL, check_layer
from test_engine import LAYER_CASES, built
from test_graph import oracle_groups, symmetric
from test_similarity import brute_hsic
from tracer.attribution import ace
from tracer.cli import main
from tracer.compress import BENCHMARK_COLUMNS, aggregate
from tracer.counterfactual import CfGanConfig, CfLossConfig, train_cf_gan
from tracer.data.dataset import make_blobs
from tracer.engine import layers as L
from tracer.engine.builders import mlp
from tracer.engine.model import TappedModel
from tracer.engine.train import TrainConfig, train_classifier
from tracer.graph import LayerGroup, build_graph, group_layers
from tracer.intervention import InterventionPlan, apply
from tracer.pipeline import ExplainSettings, explain_sample
from tracer.similarity import cka, hsic, kernel_matrix


def report(number, ok, detail):
    print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def cli(*args):
    return main([str(a) for a in args])


def test_criterion_01_cka_identities():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, p, q = int(rng.integers(4, 33)), int(rng.integers(1, 65)), int(rng.integers(1, 65))
        a, b = rng.normal(size=(n, p)), rng.normal(size=(n, q))
        Ka, Kb = kernel_matrix(a), kernel_matrix(b)
        Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
        scale = float(rng.uniform(0.01, 100))
        base = cka(Ka, Kb)
        worst = max(worst, abs(cka(Ka, Ka) - 1), abs(base - cka(Kb, Ka)),
                    abs(base - cka(kernel_matrix(scale * a), Kb)), abs(base - cka(kernel_matrix(a @ Q), Kb)))
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-9 and elapsed < 10, f"max deviation {worst:.2e}, {elapsed:.2f} s")


def test_criterion_02_hsic_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        Ki = kernel_matrix(rng.normal(size=(n, int(rng.integers(1, 6)))))
        Kj = kernel_matrix(rng.normal(size=(n, int(rng.integers(1, 6)))))
        worst = max(worst, abs(hsic(Ki, Kj) - brute_hsic(Ki, Kj)))
    report(2, worst < 1e-9, f"max |trace - double sum| {worst:.2e} over 50 pairs")


def test_criterion_03_grouping_equivalence():
    checked = mismatches = 0
    for size in range(1, 7):
        for upper in itertools.product([0, 1], repeat=size * (size - 1) // 2):
            B = symmetric(upper, size)
            checked += 1
            mismatches += [g.members for g in group_layers(B)] != oracle_groups(B)
    report(3, mismatches == 0, f"{checked} matrices, {mismatches} mismatches")


def test_criterion_04_zero_effect():
    rng = np.random.default_rng(4)
    nonzero = 0
    for case in range(20):
        d = int(rng.integers(3, 10))
        layers = [L.Dense(d, 6), L.ReLU(), L.Dense(6, 4), L.Tanh(), L.Dense(4, 3), L.Softmax()]
        model = TappedModel(layers, (d,)).init_params(case)
        x = rng.random(d)
        zeros = rng.choice(d, size=int(rng.integers(1, d)), replace=False)
        x[zeros] = 0.0
        live = int(np.flatnonzero(x)[0])
        # substituting 0 where x is already 0 leaves every tap bit-identical
        ivs = [apply(x, zeros, 0.0), apply(x, [live], 0.0), apply(x, zeros[:1], 0.0)]
        groups = [LayerGroup(i, (i,)) for i in range(len(model.tap_points))]
        amap = ace(model, groups, x, ivs)
        nonzero += int(np.count_nonzero(amap.element_effects[:, [0, 2]]))
        # features touched only by unchanged interventions
        nonzero += int(np.count_nonzero(amap.node_effects[:, zeros]))
    report(4, nonzero == 0, f"20 cases, {nonzero} nonzero terms for unchanged interventions")


def exhaustive_minimum(model, x, y):
    d = x.size
    masks = np.array(list(itertools.product([0.0, 1.0], repeat=d)))
    hits = masks[model.predict(masks * x) == y]
    return int(hits.sum(axis=1).min())


def test_criterion_05_mask_contract():
    rng = np.random.default_rng(5)
    settings = ExplainSettings(InterventionPlan("single-feature", baseline="zero"))
    c2 = minimal = close = total = 0
    gaps = []
    for m in range(20):
        d = int(rng.integers(4, 13))
        model = TappedModel([L.Dense(d, 8), L.Tanh(), L.Dense(8, 8), L.ReLU(), L.Dense(8, 3), L.Softmax()],
                            (d,)).init_params(m)
        for _ in range(10):
            x = rng.random(d)
            y = int(model.predict(x[None])[0])
            mask = explain_sample(model, x, settings, 0.0).mask.mask
            total += 1
            c2 += model.predict((mask * x)[None])[0] == y
            ok = True
            for i in np.flatnonzero(mask):
                trial = mask.copy()
                trial[i] = 0
                ok &= model.predict((trial * x)[None])[0] != y
            minimal += ok
            gap = int(mask.sum()) - exhaustive_minimum(model, x, y)
            gaps.append(gap)
            close += gap <= 2
    hist = dict(zip(*np.unique(gaps, return_counts=True)))
    detail = (f"C2 {c2}/{total}, 1-minimal {minimal}/{total}, within +2 of optimum {close}/{total}, "
              f"gap histogram {{{', '.join(f'{int(k)}: {int(v)}' for k, v in hist.items())}}}")
    report(5, c2 == total and minimal == total and close >= 0.9 * total, detail)


def test_criterion_06_gradient_checks():
    worst = {}
    for idx, case in enumerate(sorted(LAYER_CASES)):
        make, shape, draw = LAYER_CASES[case]
        rng = np.random.default_rng(idx)
        worst[case] = max(check_layer(built(make(), shape, rng), draw(rng, (2,) + shape), rng) for _ in range(20))
    covered = {built(LAYER_CASES[c][0](), LAYER_CASES[c][1], np.random.default_rng(0)).kind for c in LAYER_CASES}
    bad = [c for c, e in worst.items() if e >= TOL]
    report(6, not bad and covered == set(L.LAYER_KINDS),
           f"{len(worst)} cases x 20 draws, worst rel error {max(worst.values()):.2e}, failing {bad}")


def test_criterion_07_counterfactual_efficacy():
    start = time.perf_counter()
    train, test = make_blobs(2000, seed=0).split(0.25, 0)
    clf = train_classifier(mlp(2, (16, 16), 2, 0), train, TrainConfig(seed=0, epochs=20)).model
    targets = 1 - clf.predict(test.features)
    rows, ok = [], True
    for seed in range(5):
        medians, validity = [], []
        for lam in (0.0, 0.5, 0.9):
            gen = train_cf_gan(train, clf, CfGanConfig(seed=seed, loss=CfLossConfig(lam=lam)))
            out = gen(test.features, targets)
            validity.append(float((clf.predict(out) == targets).mean()))
            medians.append(float(np.median(np.linalg.norm(out - test.features, axis=1))))
        ok &= min(validity) >= 0.9 and medians[0] > medians[1] > medians[2]
        rows.append(f"seed {seed}: validity {min(validity):.3f}, medians "
                    + " > ".join(f"{m:.3f}" for m in medians))
    elapsed = time.perf_counter() - start
    report(7, ok and elapsed < 180, f"{elapsed:.0f} s; " + "; ".join(rows))


DIGITS_CONFIG = """\
[data]
kind = digits
[global]
repeats = 50
"""


@pytest.fixture(scope="module")
def digits_pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("digits_pipeline")
    cfg = tmp / "digits.ini"
    cfg.write_text(DIGITS_CONFIG)
    out = tmp / "out"
    for cmd in ("train", "reliability", "graph", "aggregate", "compress", "benchmark"):
        assert cli(cmd, "--config", cfg, "--out", out) == 0, cmd
    return out


def test_criterion_08_reliability_superiority(digits_pipeline):
    doc = json.loads((digits_pipeline / "reliability.json").read_text())
    means = {m["method"]: m["mean"] for m in doc["methods"]}
    trials = {m["method"]: len(m["scores"]) for m in doc["methods"]}
    gap = means["tracer"] - means["random"]
    report(8, gap >= 0.1 and trials["tracer"] == 10,
           f"S tracer {means['tracer']:.3f} vs random {means['random']:.3f} (gap {gap:.3f}), "
           f"{len(doc['excluded'])} samples without a mask excluded")


def test_criterion_09_compression(digits_pipeline):
    doc = json.loads((digits_pipeline / "compress.json").read_text())
    params, acc = doc["parameters"], doc["test_accuracy"]
    drop = 100 * (acc["original"] - acc["compressed"])
    columns = json.loads((digits_pipeline / "timing" / "benchmark_full.json").read_text())["columns"]
    ok = params["compressed"] < params["original"] and drop <= 1.0 and tuple(columns) == BENCHMARK_COLUMNS
    report(9, ok, f"parameters {params['original']} -> {params['compressed']}, accuracy "
                  f"{100 * acc['original']:.2f}% -> {100 * acc['compressed']:.2f}% (drop {drop:.2f}pp), "
                  f"kept taps {doc['kept_taps']}, benchmark columns {'match' if tuple(columns) == BENCHMARK_COLUMNS else 'differ'}")


BLOBS_CONFIG = """\
[data]
kind = blobs
[explain]
strategy = single-feature
samples = 3
[counterfactual]
samples = 3
[reliability]
samples = 50
trials = 3
[global]
samples = 40
repeats = 20
"""

PIPELINE = ("train", "explain", "graph", "aggregate", "compress", "benchmark", "cf-train", "cf-generate",
            "reliability")


def test_criterion_10_reproducibility(tmp_path):
    cfg = tmp_path / "blobs.ini"
    cfg.write_text(BLOBS_CONFIG)
    for name in ("a", "b"):
        for cmd in PIPELINE:
            assert cli(cmd, "--config", cfg, "--out", tmp_path / name, "--workers", 1) == 0, cmd

    def listing(root):
        return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file() and "timing" not in p.parts)

    a, b = tmp_path / "a", tmp_path / "b"
    files = listing(a)
    differing = [str(r) for r in files if (a / r).read_bytes() != (b / r).read_bytes()]
    ok = files == listing(b) and not differing
    report(10, ok, f"{len(files)} non-timing files compared, {len(differing)} differ {differing[:3]}")


def test_criterion_11_coverage_format():
    model = mlp(2, (8, 8, 8), 2, 0)

    def graph(superdiag):
        B = np.eye(4, dtype=np.int8)
        for i, v in enumerate(superdiag):
            B[i, i + 1] = B[i + 1, i] = v
        return build_graph(B, model)

    fixture = [([1, 0, 1], 85), ([1, 0, 0], 10), ([0, 0, 1], 4), ([0, 0, 0], 1)]
    table = aggregate([graph(s) for s, count in fixture for _ in range(count)])
    rows = table.by_node_count()
    expected = [(2, 0.85, 0.85), (3, 0.14, 0.99), (4, 0.01, 1.0)]
    report(11, rows == expected, f"rows {rows}")
