import numpy as np
import pytest

from corrugation.errors import FitDegenerate, PreconditionError
from corrugation.extend import short_extension
from corrugation.fields import MapField, ScalarField, flat_inclusion, make_grid
from corrugation.problems import circle_problem, product_problem
from corrugation.verify import connection_gap, holder_exponent_estimate, ladder_fit, refinement_slope
from engine_orchestrator import holder_study, rigidity_study


@pytest.fixture(scope="module")
def fine_grid():
    return make_grid(1.0, 256)


def test_holder_exponent_of_a_kink(fine_grid):
    fit = holder_study(fine_grid, exponent=1.4)
    assert fit.exponent == pytest.approx(0.4, abs=0.05)
    assert len(fit.moduli) == 4


def test_holder_exponent_of_a_smooth_function(fine_grid):
    X1, X2 = fine_grid.mesh()
    f = ScalarField(fine_grid, np.sin(X1) * np.cos(X2))
    h = fine_grid.h
    fit = holder_exponent_estimate(f, [8 * h, 16 * h, 32 * h, 64 * h])
    assert fit.exponent >= 0.95


def test_holder_fit_needs_variation(unit_grid):
    with pytest.raises(FitDegenerate):
        holder_exponent_estimate(ScalarField(unit_grid, np.full(unit_grid.shape, 3.0)))
    with pytest.raises(FitDegenerate):
        holder_exponent_estimate(flat_inclusion(unit_grid, 8), [0.1])
    with pytest.raises(PreconditionError):
        holder_exponent_estimate(flat_inclusion(unit_grid, 8), [0.1, 2.0])


def test_flexibility_gap_of_the_short_circle_extension():
    sd, collar = circle_problem(resolution=(128, 32))
    gap = connection_gap(short_extension(sd, collar), sd)
    np.testing.assert_allclose(gap.gap, 4.0, rtol=1e-2)
    assert gap.gap_min > 0


def test_gap_is_unchanged_by_rigid_motions(rng):
    sd, collar = circle_problem(resolution=(128, 32))
    u = short_extension(sd, collar)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    shift = rng.standard_normal(8)
    moved = MapField(u.grid, u.values @ Q.T + shift)
    np.testing.assert_allclose(connection_gap(moved, sd).gap, connection_gap(u, sd).gap, atol=1e-8)


def test_smooth_product_extension_has_a_vanishing_gap():
    sd, _, u = product_problem(kappa=1.0, resolution=(256, 16))
    gap = connection_gap(u, sd)
    assert max(abs(gap.gap_min), abs(gap.gap_max)) < 1e-3


def test_rigidity_gap_converges_with_the_grid():
    report = rigidity_study(1.0, [64, 128, 256])
    assert report.slope >= 1.0
    assert report.values[-1] < report.values[0]


def test_gap_needs_a_collar_grid(flat_map):
    sd, _ = circle_problem(resolution=(64, 16))
    with pytest.raises(PreconditionError):
        connection_gap(flat_map, sd)


def test_refinement_slope():
    report = refinement_slope("q", [1.0, 2.0, 4.0], [1.0, 4.0, 16.0])
    assert report.slope == pytest.approx(2.0)
    with pytest.raises(FitDegenerate):
        refinement_slope("q", [1.0, 2.0], [0.0, 1.0])
    with pytest.raises(FitDegenerate):
        refinement_slope("q", [1.0], [1.0])


def test_ladder_fit_needs_matching_runs():
    with pytest.raises(FitDegenerate):
        ladder_fit([], [50.0, 100.0], 1.5)
