import itertools

import numpy as np
import pytest

from tracer.engine import layers as L
from tracer.engine.model import TappedModel
from tracer.graph import (
    LayerGroup, Link, annotate, assemble, build_graph, collapse_binary, composite_check,
    export_dot, group_layers, link_groups, load_graph, save_graph, tap_blocks,
)
from tracer.similarity import binary_matrix, cka, kernel_matrix


def symmetric(upper, L):
    B = np.eye(L, dtype=np.int8)
    for (i, j), v in zip(itertools.combinations(range(L), 2), upper):
        B[i, j] = B[j, i] = v
    return B


def partitions(L):
    """Every split of 0..L-1 into consecutive runs."""
    for cuts in itertools.product([0, 1], repeat=L - 1):
        runs, cur = [], [0]
        for i, c in enumerate(cuts, start=1):
            if c:
                runs.append(tuple(cur))
                cur = [i]
            else:
                cur.append(i)
        runs.append(tuple(cur))
        yield runs


def oracle_groups(B):
    L = len(B)
    valid = []
    for runs in partitions(L):
        inside = all(B[r[k], r[k + 1]] == 1 for r in runs for k in range(len(r) - 1))
        maximal = all(B[a[-1], b[0]] == 0 for a, b in zip(runs, runs[1:]))
        if inside and maximal:
            valid.append(runs)
    assert len(valid) == 1
    return valid[0]


def oracle_links(runs, B):
    out = set()
    for a, b in itertools.combinations(range(len(runs)), 2):
        if b == a + 1:
            out.add((a, b, "adjacency"))
        elif any(B[i, j] == 1 for i in runs[a] for j in runs[b]):
            out.add((a, b, "similarity"))
    return out


@pytest.mark.parametrize("L", [1, 2, 3, 4, 5, 6])
def test_grouping_and_links_match_exhaustive_oracle(L):
    pairs = L * (L - 1) // 2
    for upper in itertools.product([0, 1], repeat=pairs):
        B = symmetric(upper, L)
        groups = group_layers(B)
        runs = oracle_groups(B)
        assert [g.members for g in groups] == runs
        assert {(l.source, l.target, l.kind) for l in link_groups(groups, B)} == oracle_links(runs, B)


def test_grouping_examples():
    assert [g.members for g in group_layers(np.ones((4, 4)))] == [(0, 1, 2, 3)]
    B = np.eye(4, dtype=int)
    B[0, 1] = B[1, 0] = B[2, 3] = B[3, 2] = 1
    assert [g.members for g in group_layers(B)] == [(0, 1), (2, 3)]


def test_eight_taps_four_nodes():
    B = np.eye(8, dtype=int)
    for i in (0, 2, 3, 5):
        B[i, i + 1] = B[i + 1, i] = 1
    groups = group_layers(B)
    assert len(groups) == 4
    assert [g.members for g in groups] == [(0, 1), (2, 3, 4), (5, 6), (7,)]
    assert [g.representative for g in groups] == [0, 2, 5, 7]


def test_link_examples():
    two = [LayerGroup(0, (0,)), LayerGroup(1, (1,))]
    assert link_groups(two, np.eye(2)) == [Link(0, 1, "adjacency")]
    B = np.eye(3, dtype=int)
    B[0, 2] = B[2, 0] = 1
    three = group_layers(B)
    assert link_groups(three, B) == [Link(0, 1, "adjacency"), Link(0, 2, "similarity"), Link(1, 2, "adjacency")]


def test_linear_chain():
    B = np.eye(8, dtype=int)
    for i in (0, 2, 3, 5):
        B[i, i + 1] = B[i + 1, i] = 1
    links = link_groups(group_layers(B), B)
    assert all(l.kind == "adjacency" for l in links)
    assert [(l.source, l.target) for l in links] == [(0, 1), (1, 2), (2, 3)]


def test_grouping_idempotent_on_representatives():
    rng = np.random.default_rng(0)
    for _ in range(200):
        L = int(rng.integers(2, 9))
        B = symmetric(rng.integers(0, 2, size=L * (L - 1) // 2), L)
        groups = group_layers(B)
        again = group_layers(collapse_binary(B, groups))
        assert [g.members for g in again] == [(i,) for i in range(len(groups))]


def test_epsilon_monotonicity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        L = int(rng.integers(2, 9))
        V = rng.uniform(0.8, 1.0, size=(L, L))
        V = (V + V.T) / 2
        np.fill_diagonal(V, 1.0)
        previous = None
        for eps in np.linspace(0.0, 0.2, 21):
            groups = group_layers(binary_matrix(V, eps))
            bounds = {g.first for g in groups}
            if previous is not None:
                assert bounds <= previous  # coarsens or preserves
            previous = bounds


def chain_graph():
    B = np.eye(4, dtype=int)
    g = build_graph(B)
    return annotate(g, {0: np.array([0.5, -0.25, 0.0])}, ["a", "b", "c"], top=2)


def test_dot_export_structure():
    dot = export_dot(chain_graph())
    nodes = [l for l in dot.splitlines() if "[label=" in l and "->" not in l]
    edges = [l for l in dot.splitlines() if "->" in l]
    assert len(nodes) == 6  # input + 4 groups + output
    assert len(edges) == 5
    assert "a: +0.5" in dot and "b: -0.25" in dot and "c:" not in dot
    assert dot == export_dot(chain_graph())


def test_dot_similarity_edge_is_dashed_once():
    B = np.eye(3, dtype=int)
    B[0, 2] = B[2, 0] = 1
    dot = export_dot(build_graph(B))
    assert dot.count("style=dashed") == 1


def test_graph_json_round_trip(tmp_path):
    g = chain_graph()
    save_graph(g, tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    assert back.to_dict() == g.to_dict()
    assert back.same_structure(g)


def identity_model():
    layers = [L.Dense(3, 4), L.ReLU(), L.Identity(), L.Identity(), L.Dense(4, 2), L.Softmax()]
    return TappedModel(layers, (3,), tap_points=[1, 2, 3, 5]).init_params(0)


def test_identity_group_collapse_is_bit_identical():
    model = identity_model()
    x = np.random.default_rng(0).normal(size=(20, 3))
    reduced, bridges = assemble(model, [0, 3], x)
    assert [b.kind for b in bridges] == ["identity"]
    assert np.array_equal(reduced(x), model(x))
    report = composite_check(model, [LayerGroup(0, (0, 1, 2)), LayerGroup(1, (3,))], x)
    assert report.overall == 1.0 and report.per_group == {0: 1.0}


def test_rotation_group_needs_fitted_bridge():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    rot = L.Dense(4, 4)
    layers = [L.Dense(3, 4), L.Tanh(), rot, L.Dense(4, 3), L.Softmax()]
    model = TappedModel(layers, (3,), tap_points=[1, 2, 4]).init_params(1)
    rot.params["W"] = Q
    rot.params["b"] = np.zeros(4)
    fit = rng.normal(size=(100, 3))
    evaluation = rng.normal(size=(200, 3))
    _, taps = model.forward(fit)
    acts = [taps[t] for t in model.tap_points]
    assert cka(kernel_matrix(acts[0]), kernel_matrix(acts[1])) == pytest.approx(1.0, abs=1e-9)
    report = composite_check(model, [LayerGroup(0, (0, 1)), LayerGroup(1, (2,))], fit, evaluation)
    assert [b.kind for b in report.bridges] == ["least-squares"]
    assert report.overall == 1.0


def test_singleton_groups_trivially_agree():
    model = identity_model()
    x = np.random.default_rng(0).normal(size=(10, 3))
    groups = [LayerGroup(i, (i,)) for i in range(4)]
    report = composite_check(model, groups, x)
    assert report.overall == 1.0 and report.per_group == {} and report.bridges == []


def test_tap_blocks_partition_layers():
    model = identity_model()
    assert tap_blocks(model) == [[0, 1], [2], [3], [4, 5]]
    with pytest.raises(ValueError, match="first tap block"):
        assemble(model, [1, 2], np.zeros((2, 3)))


def test_partition_property():
    rng = np.random.default_rng(4)
    for _ in range(100):
        L = int(rng.integers(1, 10))
        B = symmetric(rng.integers(0, 2, size=L * (L - 1) // 2), L)
        members = [m for g in group_layers(B) for m in g.members]
        assert members == list(range(L))
