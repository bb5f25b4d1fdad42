import json
import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from services.errors import AllPointsIdentical
from services.kde_service import (
    KdeModel,
    density,
    density_many,
    fit_independent_kde,
    fit_kde,
    log_density_many,
    loo_log_likelihood,
    sample,
    sample_independent,
    select_bandwidth,
)


def test_standard_normal_peak():
    model = KdeModel(np.array([[0.0]]), 1.0)
    assert density(model, [0.0]) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=1e-12)
    assert density(model, [0.0]) == pytest.approx(0.39894, abs=1e-5)


def test_two_point_density_is_symmetric():
    model = KdeModel(np.array([[-1.3], [1.3]]), 0.6)
    for q in (0.0, 0.4, 1.3, 2.9):
        assert density(model, [q]) == pytest.approx(density(model, [-q]), rel=1e-12)


def test_density_matches_direct_summation():
    points = np.array([[0.0, 0.0], [1.0, -0.5], [-0.7, 0.2], [0.3, 1.1], [2.0, 0.4]])
    h = 0.7
    query = np.array([0.3, -0.1])
    expected = 0.0
    for p in points:
        sq = float(np.sum((query - p) ** 2))
        expected += (2.0 * math.pi) ** -1.0 * h**-2 * math.exp(-sq / (2.0 * h * h))
    expected /= len(points)
    assert density(KdeModel(points, h), query) == pytest.approx(expected, rel=1e-12)


def test_one_dimensional_density_integrates_to_one(rng):
    points = rng.normal(size=(15, 1)) * 2.0
    model = fit_kde(points)
    h = model.bandwidth
    grid = np.linspace(points.min() - 10 * h, points.max() + 10 * h, 40001)
    values = density_many(model, grid.reshape(-1, 1))
    assert np.all(values >= 0)
    assert trapezoid(values, grid) == pytest.approx(1.0, abs=1e-3)


def test_two_dimensional_density_integrates_to_one(rng):
    model = KdeModel(rng.normal(size=(6, 2)), 0.5)
    h = model.bandwidth
    lo, hi = model.points.min(axis=0) - 8 * h, model.points.max(axis=0) + 8 * h
    x = np.linspace(lo[0], hi[0], 401)
    y = np.linspace(lo[1], hi[1], 401)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    values = density_many(model, np.column_stack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
    assert np.all(values >= 0)
    assert trapezoid(trapezoid(values, y, axis=1), x) == pytest.approx(1.0, abs=1e-3)


def test_loo_two_point_closed_form():
    delta, h = 1.3, 0.8
    expected = math.log((2.0 * math.pi) ** -0.5 / h * math.exp(-delta**2 / (2.0 * h * h)))
    assert loo_log_likelihood(np.array([[0.0], [delta]]), h) == pytest.approx(expected, rel=1e-12)


def test_loo_increases_without_bound_for_duplicated_points(rng):
    base = rng.normal(size=(10, 2))
    points = np.vstack([base, base])
    scores = [loo_log_likelihood(points, h) for h in (1.0, 0.1, 0.01)]
    assert scores[0] < scores[1] < scores[2]


def test_selected_bandwidth_is_locally_optimal(rng):
    points = rng.normal(size=(200, 1))
    h = select_bandwidth(points)
    best = loo_log_likelihood(points, h)
    assert best >= loo_log_likelihood(points, h / 2)
    assert best >= loo_log_likelihood(points, 2 * h)


def test_two_point_bandwidth_matches_grid_search():
    points = np.array([[0.0], [1.0]])
    grid = np.exp(np.linspace(math.log(0.01), math.log(10.0), 10_000))
    oracle = grid[int(np.argmax([loo_log_likelihood(points, h) for h in grid]))]
    assert select_bandwidth(points) == pytest.approx(oracle, rel=1e-3)
    assert select_bandwidth(points) == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_bandwidth_matches_grid_search_on_fixed_datasets(seed):
    gen = np.random.default_rng(seed)
    points = gen.normal(size=(40, 2)) * [1.0, 3.0] + gen.normal(size=2)
    h = select_bandwidth(points)
    grid = np.exp(np.linspace(math.log(h / 5), math.log(h * 5), 10_000))
    oracle = grid[int(np.argmax([loo_log_likelihood(points, g) for g in grid]))]
    assert h == pytest.approx(oracle, rel=1e-3)


def test_bandwidth_scale_equivariance(rng):
    points = rng.normal(size=(60, 2))
    h = select_bandwidth(points)
    assert select_bandwidth(7.5 * points) == pytest.approx(7.5 * h, rel=1e-3)


def test_standard_normal_bandwidth_bracket():
    points = np.random.default_rng(0).normal(size=(500, 1))
    assert 0.15 <= select_bandwidth(points) <= 0.60


def test_identical_points_rejected():
    with pytest.raises(AllPointsIdentical):
        select_bandwidth(np.ones((5, 2)))


def test_tiny_bandwidth_samples_coincide_with_training_points(rng):
    points = rng.normal(size=(12, 3))
    draws = sample(KdeModel(points, 1e-15), 500, rng)
    dist = np.min(np.linalg.norm(draws[:, None, :] - points[None, :, :], axis=2), axis=1)
    assert np.all(dist < 1e-12)


def test_single_point_sampling_moments():
    p = np.array([1.5, -2.0])
    draws = sample(KdeModel(p.reshape(1, -1), 1.0), 100_000, 7)
    np.testing.assert_allclose(draws.mean(axis=0), p, atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), np.eye(2), atol=0.03)


def test_mixture_components_are_equally_likely():
    draws = sample(KdeModel(np.array([[-3.0], [3.0]]), 0.5), 100_000, 8)
    assert 0.49 <= float(np.mean(draws[:, 0] > 0)) <= 0.51


def test_sampling_matches_mixture_moments(rng):
    points = rng.normal(size=(30, 2)) @ np.array([[1.0, 0.5], [0.0, 2.0]])
    h = 0.4
    n = 100_000
    draws = sample(KdeModel(points, h), n, 21)
    expected_cov = np.cov(points.T, ddof=0) + h * h * np.eye(2)
    tolerance = 4.0 * np.sqrt(np.diag(expected_cov)) / math.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - points.mean(axis=0)) <= tolerance)
    np.testing.assert_allclose(np.cov(draws.T, ddof=0), expected_cov, rtol=0.05, atol=0.02)
    assert np.all(np.isfinite(log_density_many(KdeModel(points, h), draws[:1000])))


def test_sampling_is_deterministic_under_seed():
    model = KdeModel(np.array([[0.0, 1.0], [2.0, -1.0]]), 0.3)
    np.testing.assert_array_equal(sample(model, 50, 5), sample(model, 50, 5))
    with pytest.raises(ValueError):
        sample(model, 0, 5)


def test_independent_sampler_breaks_correlation(rng):
    base = rng.normal(size=200)
    points = np.column_stack([base, base + 0.1 * rng.normal(size=200)])
    draws = sample_independent(fit_independent_kde(points), 100_000, 3)
    assert abs(np.corrcoef(draws.T)[0, 1]) < 0.02


def test_model_json_round_trip():
    model = KdeModel(np.array([[0.1, 0.2], [0.3, 0.4]]), 0.123456789)
    data = json.loads(json.dumps(model.to_dict()))
    assert set(data) == {"points", "h", "d"}
    restored = KdeModel.from_dict(data)
    np.testing.assert_array_equal(restored.points, model.points)
    assert restored.bandwidth == model.bandwidth
