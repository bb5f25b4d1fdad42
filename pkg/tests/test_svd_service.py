import json

import numpy as np
import pytest

from services.errors import DTooLarge, LayoutMismatch, ZeroSingularValue
from services.scenario_service import WeightVector, compute_weights, weighted_vectors
from services.svd_service import (
    ReducedBasis,
    explained_variance,
    fit_basis,
    reconstruct,
    reconstruct_values,
    reconstruction_error,
    reduce,
    reduce_dataset,
    truncate_basis,
)
from tests.helpers import make_dataset, unit_weights


def _random_dataset(seed: int, n: int = 30, n_x: int = 6):
    gen = np.random.default_rng(seed)
    mixing = gen.normal(size=(n_x, n_x))
    return make_dataset(gen.normal(size=(n, n_x)) @ mixing + gen.normal(size=n_x) * 5.0)


@pytest.mark.parametrize("seed", range(20))
def test_total_variance_and_explained_variance_identities(seed):
    dataset = _random_dataset(seed)
    weights = compute_weights(dataset)
    basis, coords = fit_basis(dataset, weights, 6)
    centered = weighted_vectors(dataset, weights) - basis.mu
    assert basis.total_variance == pytest.approx(float(np.sum(basis.spectrum**2)), rel=1e-9)
    assert basis.total_variance == pytest.approx(float(np.sum(centered**2)), rel=1e-12)
    for d in range(1, 7):
        truncated = truncate_basis(basis, d)
        residual = reconstruction_error(truncated, dataset, coords[:, :d])
        assert 1.0 - residual / basis.total_variance == pytest.approx(explained_variance(basis, d), abs=1e-9)


def test_train_coordinates_are_uncorrelated():
    dataset = _random_dataset(1, n=40)
    basis, coords = fit_basis(dataset, compute_weights(dataset), 5)
    gram = coords.T @ coords
    off_diagonal = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off_diagonal)) < 1e-9
    np.testing.assert_allclose(coords.mean(axis=0), 0.0, atol=1e-9)


def test_left_vectors_orthonormal_and_sorted():
    dataset = _random_dataset(2)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 6)
    np.testing.assert_allclose(basis.left_vectors.T @ basis.left_vectors, np.eye(6), atol=1e-9)
    assert np.all(np.diff(basis.singular_values) <= 0)
    np.testing.assert_allclose(basis.mu, weighted_vectors(dataset, basis.weights).mean(axis=0), atol=1e-12)


def test_sign_convention_largest_entry_positive():
    dataset = _random_dataset(3)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 4)
    for j in range(4):
        u = basis.left_vectors[:, j]
        assert u[np.argmax(np.abs(u))] > 0


def test_reconstruction_error_non_increasing_in_d():
    dataset = _random_dataset(4)
    basis, coords = fit_basis(dataset, compute_weights(dataset), 6)
    errors = [reconstruction_error(truncate_basis(basis, d), dataset, coords[:, :d]) for d in range(1, 7)]
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert errors[-1] == pytest.approx(0.0, abs=1e-9)


def test_identical_vectors_give_zero_spectrum():
    dataset = make_dataset(np.tile([1.0, -2.0, 3.0], (5, 1)))
    weights = WeightVector(np.array([1.0, 2.0, 0.5]))
    basis, coords = fit_basis(dataset, weights, 2)
    np.testing.assert_allclose(basis.spectrum, 0.0, atol=1e-12)
    np.testing.assert_allclose(basis.mu, [1.0, -4.0, 1.5])
    np.testing.assert_array_equal(coords, 0.0)
    assert explained_variance(basis, 1) == 1.0
    with pytest.raises(ZeroSingularValue):
        reduce(basis, dataset.vectors[0])


def test_collinear_points_have_rank_one():
    dataset = make_dataset([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]])
    basis, coords = fit_basis(dataset, unit_weights(2), 1)
    assert basis.spectrum[0] > 0
    assert basis.spectrum[1] == pytest.approx(0.0, abs=1e-12)
    assert explained_variance(basis, 1) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(reconstruct_values(basis, coords), dataset.vectors, atol=1e-12)


def test_reduce_matches_train_coordinates():
    dataset = _random_dataset(5)
    basis, coords = fit_basis(dataset, compute_weights(dataset), 4)
    np.testing.assert_allclose(reduce_dataset(basis, dataset), coords, atol=1e-9)
    np.testing.assert_allclose(reduce(basis, dataset.vector(7)), coords[7], atol=1e-9)


def test_reduce_of_mean_and_axis_points():
    dataset = _random_dataset(6)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 3)
    np.testing.assert_allclose(reduce(basis, basis.mu / basis.alpha), 0.0, atol=1e-9)
    axis = (basis.mu + basis.singular_values[0] * basis.left_vectors[:, 0]) / basis.alpha
    np.testing.assert_allclose(reduce(basis, axis), [1.0, 0.0, 0.0], atol=1e-9)


def test_reconstruct_zero_is_mean_scenario_and_full_rank_is_exact():
    dataset = _random_dataset(7)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 6)
    np.testing.assert_allclose(reconstruct(basis, np.zeros(6)).values, basis.mu / basis.alpha)
    x = dataset.vector(3)
    np.testing.assert_allclose(reconstruct(basis, reduce(basis, x)).values, x.values, atol=1e-9)


def test_d_bounds():
    dataset = _random_dataset(8, n=4, n_x=6)
    weights = compute_weights(dataset)
    with pytest.raises(DTooLarge):
        fit_basis(dataset, weights, 5)
    with pytest.raises(DTooLarge):
        fit_basis(dataset, weights, 0)
    basis, _ = fit_basis(dataset, weights, 4)
    with pytest.raises(DTooLarge):
        explained_variance(basis, 5)


def test_shape_mismatch_is_rejected():
    dataset = _random_dataset(9)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 2)
    with pytest.raises(LayoutMismatch):
        reconstruct_values(basis, np.zeros(3))
    with pytest.raises(LayoutMismatch):
        reduce(basis, np.zeros(5))


def test_truncated_solver_agrees_with_full():
    dataset = _random_dataset(10, n=40, n_x=12)
    weights = compute_weights(dataset)
    full, full_coords = fit_basis(dataset, weights, 3, "full")
    truncated, truncated_coords = fit_basis(dataset, weights, 3, "truncated")
    np.testing.assert_allclose(truncated.singular_values, full.singular_values, rtol=1e-9)
    np.testing.assert_allclose(truncated.left_vectors, full.left_vectors, atol=1e-7)
    np.testing.assert_allclose(truncated_coords, full_coords, atol=1e-7)
    assert truncated.total_variance == pytest.approx(full.total_variance, rel=1e-12)


def test_basis_json_round_trip_is_bit_faithful():
    dataset = _random_dataset(11)
    basis, _ = fit_basis(dataset, compute_weights(dataset), 3)
    restored = ReducedBasis.from_dict(json.loads(json.dumps(basis.to_dict())))
    for name in ("mu", "singular_values", "left_vectors", "spectrum"):
        np.testing.assert_array_equal(getattr(restored, name), getattr(basis, name))
    np.testing.assert_array_equal(restored.alpha, basis.alpha)
    assert restored.layout == basis.layout
    assert restored.total_variance == basis.total_variance
