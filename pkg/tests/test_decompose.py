import numpy as np
import pytest

from corrugation.decompose import (
    DirectionSet,
    PerturbationData,
    decompose_field,
    decompose_spd,
    perturbed_decompose,
    perturbed_decompose_field,
    standard_directions,
)
from corrugation.errors import NotDecomposable, PreconditionError, UnsupportedDimension


def _random_sym(rng, shape, size):
    M = rng.normal(size=shape + (2, 2))
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    norms = np.sqrt(np.sum(M ** 2, axis=(-1, -2), keepdims=True))
    return size * M / norms


def _reconstruct(coeffs, dirs):
    return np.einsum("...k,kij->...ij", coeffs, dirs.outer())


def test_standard_frame_sums_to_three_halves_identity():
    dirs = standard_directions()
    np.testing.assert_allclose(dirs.outer().sum(axis=0), 1.5 * np.eye(2), atol=1e-15)
    with pytest.raises(UnsupportedDimension):
        standard_directions(3)


def test_identity_and_diagonal_examples():
    dirs = standard_directions()
    np.testing.assert_allclose(decompose_spd(np.eye(2), dirs), [2 / 3, 2 / 3, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(decompose_spd(np.diag([2.0, 1.0]), dirs), [5 / 3, 2 / 3, 2 / 3], atol=1e-12)


def test_far_from_identity_is_not_decomposable():
    with pytest.raises(NotDecomposable) as info:
        decompose_spd(np.diag([1.0, 10.0]), standard_directions())
    assert min(info.value.details["coefficients"]) <= 0


def test_random_matrices_near_identity_round_trip(rng):
    dirs = standard_directions()
    P = np.eye(2) + _random_sym(rng, (1000,), 1.0) * rng.uniform(0, 0.3, size=(1000, 1, 1))
    coeffs = decompose_field(P.reshape(10, 100, 2, 2), dirs).reshape(1000, 3)
    assert np.all(coeffs > 0)
    assert np.abs(_reconstruct(coeffs, dirs) - P).max() <= 1e-12


def test_direction_set_validates_its_vectors():
    with pytest.raises(PreconditionError):
        DirectionSet(np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(PreconditionError):
        DirectionSet(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


def test_unperturbed_solution_is_the_square_root():
    dirs = standard_directions()
    pert = PerturbationData(np.zeros((3, 2, 2)), np.zeros((3, 3, 2, 2)))
    a = perturbed_decompose(np.diag([2.0, 1.0]), pert, dirs)
    np.testing.assert_allclose(a ** 2, [5 / 3, 2 / 3, 2 / 3], atol=1e-12)


def test_perturbed_newton_converges_fast(rng):
    dirs = standard_directions()
    for _ in range(100):
        P = np.eye(2) + _random_sym(rng, (), 0.2)
        Lam = _random_sym(rng, (3,), 0.01)
        Theta = _random_sym(rng, (3, 3), 0.004)
        a, history = perturbed_decompose(P, PerturbationData(Lam, Theta), dirs, return_history=True)
        assert np.all(a > 0)
        assert len(history) - 1 <= 10
        residual = (
            _reconstruct(a * a, dirs)
            + np.einsum("k,kij->ij", a, Lam)
            + np.einsum("i,j,ijpq->pq", a, a, Theta)
            - P
        )
        assert np.abs(residual).max() <= 1e-10


def test_solution_depends_linearly_on_small_perturbations(rng):
    dirs = standard_directions()
    P = np.eye(2)
    a0 = np.sqrt(decompose_spd(P, dirs))
    Lam = _random_sym(rng, (3,), 1.0)
    eps = np.array([1e-3, 2e-3, 4e-3])
    shifts = []
    for e in eps:
        a = perturbed_decompose(P, PerturbationData(e * Lam, np.zeros((3, 3, 2, 2))), dirs)
        shifts.append(np.abs(a - a0).max())
    slope = np.polyfit(np.log(eps), np.log(shifts), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.2)


def test_budget_at_sigma0_is_rejected():
    dirs = standard_directions()
    Lam = np.zeros((3, 2, 2))
    Lam[0] = 0.1 * np.eye(2)
    with pytest.raises(PreconditionError):
        perturbed_decompose(np.eye(2), PerturbationData(Lam, np.zeros((3, 3, 2, 2))), dirs)


def test_field_solve_is_zero_off_the_mask():
    dirs = standard_directions()
    P = np.broadcast_to(np.eye(2), (16, 16, 2, 2)).copy()
    Lam = np.zeros((16, 16, 3, 2, 2))
    Theta = np.zeros((16, 16, 3, 3, 2, 2))
    mask = np.zeros((16, 16), dtype=bool)
    a, steps = perturbed_decompose_field(P, P, Lam, Theta, dirs, 0.1, mask)
    assert steps == 0 and not np.any(a)
    mask[4:8, 4:8] = True
    a, _ = perturbed_decompose_field(P, P, Lam, Theta, dirs, 0.1, mask)
    np.testing.assert_allclose(a[mask], np.sqrt(2 / 3), atol=1e-12)
    assert not np.any(a[~mask])
