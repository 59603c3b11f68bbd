import numpy as np
import pytest

from corrugation import mollify as mollify_module
from corrugation.errors import PreconditionError, ResolutionError
from corrugation.fields import ScalarField, flat_inclusion, make_grid
from corrugation.mollify import build_kernel, commutator_defect, mollification_estimates, mollify


def test_kernel_weights_sum_to_one(unit_grid):
    kernel = build_kernel(5 * unit_grid.h, unit_grid)
    assert kernel.integral() == pytest.approx(1.0)


def test_constants_survive_even_reflection(unit_grid):
    f = ScalarField(unit_grid, np.full(unit_grid.shape, 2.5))
    np.testing.assert_allclose(mollify(f, 4 * unit_grid.h).values, 2.5, atol=1e-12)


def test_odd_reflection_keeps_affine_maps(unit_grid):
    X1, X2 = unit_grid.mesh()
    f = ScalarField(unit_grid, 2 * X1 + 3 * X2 + 1)
    np.testing.assert_allclose(mollify(f, 6 * unit_grid.h, boundary="odd").values, f.values, atol=1e-12)


def test_odd_reflection_keeps_carried_jacobian(unit_grid):
    u = flat_inclusion(unit_grid, 8, scale=0.5)
    smoothed = mollify(u, 4 * unit_grid.h, boundary="odd")
    np.testing.assert_allclose(smoothed.values, u.values, atol=1e-12)
    np.testing.assert_allclose(smoothed.jacobian, u.jacobian, atol=1e-12)


def test_support_grows_by_at_most_ell(unit_grid):
    values = np.zeros(unit_grid.shape)
    values[32, 32] = 1.0
    ell = 4 * unit_grid.h
    out = mollify(ScalarField(unit_grid, values), ell).values
    X1, X2 = unit_grid.mesh()
    c = unit_grid.node((32, 32))
    far = np.hypot(X1 - c[0], X2 - c[1]) >= ell
    assert np.all(out[far] == 0.0)
    assert out[32, 32] > 0


def test_scale_below_two_nodes_is_rejected(unit_grid):
    f = ScalarField(unit_grid, np.zeros(unit_grid.shape))
    with pytest.raises(ResolutionError):
        mollify(f, unit_grid.h)
    with pytest.raises(PreconditionError):
        mollify(f, 4 * unit_grid.h, boundary="zero")


def test_commutator_of_constants_vanishes(unit_grid):
    f = ScalarField(unit_grid, np.ones(unit_grid.shape))
    assert commutator_defect(f, f, 4 * unit_grid.h, 0.5) == pytest.approx(0.0, abs=1e-12)


def test_estimate_constants_are_stable_across_scales():
    grid = make_grid(1.0, 128)
    X1, X2 = grid.mesh()
    f = ScalarField(grid, np.abs(X1 - 0.5))
    g = ScalarField(grid, np.abs(X2 - 0.5))
    estimates = mollification_estimates(f, g, [0.2, 0.1, 0.05], theta=1.0)
    for name in ("smoothing_gain", "approximation", "commutator"):
        values = np.array([getattr(p, name) for p in estimates])
        assert np.all(values > 0)
        assert values.max() / values.min() <= 2.0


def _disc_bump(grid, radius):
    X1, X2 = grid.mesh()
    r2 = ((X1 - 0.5) ** 2 + (X2 - 0.5) ** 2) / radius ** 2
    values = np.zeros(grid.shape)
    inside = r2 < 1
    values[inside] = np.exp(1 - 1 / (1 - r2[inside]))
    return ScalarField(grid, values * np.cos(7 * X1))


def test_wide_kernels_match_direct_correlation(monkeypatch):
    grid = make_grid(1.0, 256)
    f = _disc_bump(grid, 0.1)
    ell = 0.15
    assert build_kernel(ell, grid).weights.size > mollify_module.DIRECT_WEIGHTS_MAX
    wide = mollify(f, ell).values
    monkeypatch.setattr(mollify_module, "DIRECT_WEIGHTS_MAX", 10 ** 9)
    direct = mollify(f, ell).values
    np.testing.assert_allclose(wide, direct, atol=1e-12)
    X1, X2 = grid.mesh()
    far = (np.abs(X1 - 0.5) > 0.27) | (np.abs(X2 - 0.5) > 0.27)
    assert np.all(wide[far] == 0.0)
    assert np.any(wide[~far] != 0.0)
