import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracer.engine import layers as L
from tracer.engine.builders import mlp
from tracer.engine.model import TappedModel
from tracer.intervention import (
    InterventionPlan, apply, baseline_for, check_isolation, generate, index_sets,
)


def test_null_intervention():
    iv = apply(np.array([1.0, 2.0, 3.0]), [], 0.0)
    assert iv.sample.tolist() == [1, 2, 3]
    assert iv.is_null


def test_direct_substitution():
    iv = apply(np.array([1.0, 2.0, 3.0]), [2, 0], 0.0)
    assert iv.sample.tolist() == [0, 2, 0]
    assert iv.index_set == (0, 2)


def test_patch_at_origin_changes_four_pixels():
    x = np.arange(16, dtype=float).reshape(1, 4, 4)
    sets = index_sets(x.shape, InterventionPlan("patch-occlusion", patch_size=2))
    iv = apply(x, sets[0], x.mean())
    assert sets[0] == (0, 1, 4, 5)
    assert np.count_nonzero(iv.sample != x) == 4


def test_out_of_range_index():
    with pytest.raises(IndexError):
        apply(np.zeros(3), [3], 0.0)
    with pytest.raises(ValueError, match="finite"):
        apply(np.zeros(3), [0], np.inf)


def test_single_feature_enumeration():
    ivs = generate(np.array([0.5, 0.1, 0.9]), InterventionPlan("single-feature"))
    assert len(ivs) == 3
    assert all(len(iv.index_set) == 1 for iv in ivs)


def test_patch_grid_28():
    sets = index_sets((1, 28, 28), InterventionPlan("patch-occlusion", patch_size=4, stride=4))
    assert len(sets) == 49
    assert sorted(i for s in sets for i in s) == list(range(784))


def test_patch_edge_coverage():
    sets = index_sets((1, 5, 5), InterventionPlan("patch-occlusion", patch_size=2))
    assert set().union(*sets) == set(range(25))
    assert len(set(sets)) == len(sets)


def test_patch_larger_than_image():
    with pytest.raises(ValueError, match="larger than image"):
        index_sets((1, 3, 3), InterventionPlan("patch-occlusion", patch_size=4))


def test_coalitions_are_seeded_unique_and_covering():
    plan = InterventionPlan("coalition-sampling", coalition_count=100)
    a = index_sets((20,), plan, seed=7)
    b = index_sets((20,), plan, seed=7)
    assert a == b
    assert len(set(a)) == len(a)
    assert set().union(*a) == set(range(20))
    assert a != index_sets((20,), plan, seed=8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(2, 6), st.integers(1, 3),
       st.sampled_from(["single-feature", "patch-occlusion", "coalition-sampling"]), st.integers(0, 99))
def test_generated_samples_change_only_inside_index_set(c, h, w, patch, strategy, seed):
    x = np.random.default_rng(seed).random((c, h, w)) + 1.0
    plan = InterventionPlan(strategy, patch_size=min(patch, h, w), coalition_count=10)
    ivs = generate(x, plan, seed=seed, baseline=0.0)
    covered = set()
    for iv in ivs:
        changed = set(np.flatnonzero(iv.sample.reshape(-1) != x.reshape(-1)).tolist())
        assert changed == set(iv.index_set)
        covered |= changed
    assert covered == set(range(x.size))
    assert len({iv.index_set for iv in ivs}) == len(ivs)


def test_per_feature_mean_baseline_is_reproducible():
    train = np.random.default_rng(0).random((30, 1, 2, 2))
    plan = InterventionPlan(baseline="per-feature-mean")
    a = baseline_for(plan, train, (1, 2, 2))
    assert np.array_equal(a, baseline_for(plan, train, (1, 2, 2)))
    assert np.allclose(a, train.reshape(30, -1).mean(axis=0))
    assert np.all(baseline_for(InterventionPlan(baseline="dataset-mean"), train, (1, 2, 2)) == train.mean())
    with pytest.raises(ValueError, match="training features"):
        baseline_for(plan, None, (4,))


def test_isolation_report():
    model = mlp(3, (4,), 2, 0)
    x = np.array([0.2, 0.4, 0.6])
    null = check_isolation(model, x, apply(x, [], 0.0))
    assert null.ok and null.output_delta == 0.0
    real = check_isolation(model, x, apply(x, [1], 0.0))
    assert real.ok


def test_linearity_oracle():
    model = TappedModel([L.Dense(6, 3, bias=False)], (6,)).init_params(2)
    x = np.random.default_rng(1).normal(size=6)
    base = model(x[None])
    a = model(apply(x, [0, 2], 0.0).sample[None]) - base
    b = model(apply(x, [3, 5], 0.0).sample[None]) - base
    both = model(apply(x, [0, 2, 3, 5], 0.0).sample[None]) - base
    assert np.max(np.abs(both - (a + b))) < 1e-9
