import numpy as np
import pytest

from services.scenario_service import CUT_IN_SCHEMA, LVD_SCHEMA, ScenarioCategory, compute_weights
from services.svd_service import explained_variance, fit_basis
from services.synthetic_service import (
    INTRINSIC_DIMENSION,
    GroundTruthSampler,
    synth_generate,
    synth_scenarios,
)


@pytest.mark.parametrize("category", ["lvd", "cut_in"])
def test_same_seed_gives_identical_datasets(category):
    first = synth_generate(category, 30, seed=5, n_t=20)
    second = synth_generate(category, 30, seed=5, n_t=20)
    np.testing.assert_array_equal(first.vectors, second.vectors)
    assert first.ids == second.ids
    assert not np.array_equal(first.vectors, synth_generate(category, 30, seed=6, n_t=20).vectors)


def test_large_draw_has_positive_durations_and_valid_layout():
    scenarios = synth_scenarios("lvd", 10_000, seed=1)
    assert all(sc.duration > 0 and sc.statics["duration"] > 0 for sc in scenarios)
    assert all(set(sc.statics) == set(LVD_SCHEMA.static_names) for sc in scenarios)
    dataset = synth_generate("cut_in", 2_000, seed=2, n_t=50)
    assert dataset.layout == CUT_IN_SCHEMA.layout(50)
    assert np.all(dataset.vectors[:, dataset.layout.static_index("duration")] > 0)


def test_recorded_signals_are_valid():
    for sc in synth_scenarios("cut_in", 20, seed=3):
        for samples in sc.signals.values():
            assert samples.shape[0] >= 4
            assert np.all(np.diff(samples[:, 0]) > 0)
            assert samples[0, 0] == sc.t0 and samples[-1, 0] == sc.t1
        assert sc.category is ScenarioCategory.CUT_IN


def test_five_components_explain_most_lvd_variance():
    dataset = synth_generate("lvd", 1_000, seed=0, n_t=50)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 5)
    assert INTRINSIC_DIMENSION[ScenarioCategory.LVD] == 5
    assert explained_variance(basis, 5) > 0.9
    assert explained_variance(basis, 1) < 0.7


def test_ground_truth_sampler_is_seeded():
    sampler = GroundTruthSampler("lvd", n_t=15)
    np.testing.assert_array_equal(sampler.draw(10, 4).vectors, sampler.draw(10, 4).vectors)
    assert sampler.draw(10, 4).layout == LVD_SCHEMA.layout(15)


def test_invalid_requests():
    with pytest.raises(ValueError):
        synth_scenarios("lvd", 0, seed=0)
    with pytest.raises(ValueError):
        synth_scenarios("custom", 5, seed=0)
