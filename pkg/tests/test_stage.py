import numpy as np
import pytest
from pydantic import ValidationError

from corrugation import stage
from corrugation.decompose import standard_directions
from corrugation.errors import NyquistViolation, PreconditionError, UnsupportedDimension
from corrugation.fields import ScalarField, SymMatrixField, flat_inclusion, identity_metric, make_grid
from corrugation.stage import StageParams, check_nyquist, degenerate_cutoff, flat_benchmark, perform_stage, wave_vectors
from corrugation.verify import ladder_fit, stage_certificate


def _zero(grid):
    return SymMatrixField(grid, np.zeros(grid.shape + (2, 2)))


def test_cutoff_values_and_monotonicity():
    grid = make_grid(1.0, 16)
    r = np.zeros(grid.shape)
    r[0, :4] = [0.0, 0.05, 0.1, 0.2]
    psi = degenerate_cutoff(ScalarField(grid, r), delta=0.25, lam=100.0, tau=1.5, C0=1.0).values
    np.testing.assert_allclose(psi[0, :4], [20.0, 20.0, 10.0, 5.0], rtol=1e-12)

    ramp = np.tile(np.linspace(0.0, 0.3, 16), (16, 1))
    psi = degenerate_cutoff(ScalarField(grid, ramp), 0.25, 100.0, 1.5, 1.0).values
    assert np.all(np.diff(psi[0]) <= 1e-12)


def test_cutoff_refuses_eps_above_delta():
    grid = make_grid(1.0, 16)
    with pytest.raises(PreconditionError):
        degenerate_cutoff(ScalarField(grid, np.zeros(grid.shape)), 0.25, 100.0, 1.5, C0=20.0)


def test_nyquist_limit(ladder_grid):
    check_nyquist(200.0 ** 1.5, ladder_grid)
    with pytest.raises(NyquistViolation) as info:
        check_nyquist(300.0 ** 1.5, ladder_grid)
    assert info.value.exit_code == 3


def test_stage_params_reject_unknown_keys():
    with pytest.raises(ValidationError):
        StageParams(delta=0.09, lam=50.0, tau=1.5, speed=2.0)


def test_wave_vectors_snap_on_periodic_axes(periodic_grid, unit_grid):
    dirs = standard_directions()
    w = wave_vectors(periodic_grid, 100.0, dirs)
    np.testing.assert_allclose(w / (2 * np.pi), np.round(w / (2 * np.pi)), atol=1e-9)
    np.testing.assert_allclose(wave_vectors(unit_grid, 100.0, dirs), 100.0 * dirs.vectors)


def test_zero_rho_leaves_the_map_alone(ladder_grid):
    u = flat_inclusion(ladder_grid, 8)
    rho = ScalarField(ladder_grid, np.zeros(ladder_grid.shape))
    result = perform_stage(u, rho, _zero(ladder_grid), identity_metric(ladder_grid), StageParams(delta=0.09, lam=50.0, tau=1.5))
    np.testing.assert_array_equal(result.v.values, u.values)
    assert result.certificate.measured["E_c0"] == 0.0
    assert not result.support.any()


def test_constant_rho_on_flat_chart_is_exact(ladder_grid):
    u = flat_inclusion(ladder_grid, 8)
    rho = ScalarField(ladder_grid, np.full(ladder_grid.shape, 0.15))
    result = perform_stage(u, rho, _zero(ladder_grid), identity_metric(ladder_grid), StageParams(delta=0.09, lam=50.0, tau=1.5))
    cert = result.certificate
    assert cert.measured["E_c0"] < 1e-12
    assert cert.decomposition_identity < 1e-10
    assert cert.newton_steps == 0
    assert all(outcome == "held" for outcome in cert.checks.values())


def test_oscillating_rho_certificate(ladder_grid):
    u, rho, H, G = flat_benchmark(ladder_grid, 0.09, 50.0)
    result = perform_stage(u, rho, H, G, StageParams(delta=0.09, lam=50.0, tau=1.5))
    cert = result.certificate
    assert cert.measured["E_c0"] > 0.0
    assert all(np.isfinite(r) and r > 0 for r in cert.ratios.values())
    ledger = stage_certificate(result)
    assert ledger.all_finite
    assert {e.name for e in ledger.entries} == set(cert.bounds)


def test_stage_rejects_bad_inputs(ladder_grid):
    G, H = identity_metric(ladder_grid), _zero(ladder_grid)
    rho = ScalarField(ladder_grid, np.full(ladder_grid.shape, 0.15))
    params = StageParams(delta=0.09, lam=50.0, tau=1.5)
    with pytest.raises(UnsupportedDimension):
        perform_stage(flat_inclusion(ladder_grid, 6), rho, H, G, params)
    with pytest.raises(PreconditionError):
        perform_stage(flat_inclusion(ladder_grid, 8), rho, H, G, StageParams(delta=0.09, lam=20.0, tau=1.5))
    with pytest.raises(PreconditionError):
        perform_stage(flat_inclusion(ladder_grid, 8), ScalarField(ladder_grid, np.full(ladder_grid.shape, 0.5)), H, G, params)


def test_compact_stage_stays_in_the_support():
    grid = make_grid(0.1, 256)
    u, rho, H, G = flat_benchmark(grid, 0.09, 90.0, compact=True)
    result = perform_stage(u, rho, H, G, StageParams(delta=0.09, lam=90.0, tau=1.5))
    assert result.certificate.support_excess == 0.0
    outside = rho.values == 0
    assert outside.any()
    np.testing.assert_array_equal(result.v.values[outside], u.values[outside])
    assert not result.certificate.b_mollified


def test_mollified_amplitudes_stay_near_the_support():
    grid = make_grid(0.6, 256)
    u, rho, H, G = flat_benchmark(grid, 0.09, 14.0, compact=True)
    params = StageParams(delta=0.09, lam=14.0, tau=1.5, C0=1.0, lambda0=10.0)
    result = perform_stage(u, rho, H, G, params)
    cert = result.certificate
    assert cert.b_mollified
    assert result.support.any()
    assert 0.0 <= cert.support_excess <= params.ell_b
    outside = ~np.any(result.b_tilde != 0, axis=-1)
    np.testing.assert_array_equal(result.v.values[outside], u.values[outside])


def test_error_grows_with_the_amplitude(ladder_grid):
    errors = []
    for delta in (0.045, 0.09):
        u, rho, H, G = flat_benchmark(ladder_grid, delta, 50.0)
        errors.append(perform_stage(u, rho, H, G, StageParams(delta=delta, lam=50.0, tau=1.5)).certificate.measured["E_c0"])
    assert 0.0 < errors[0] <= 0.75 * errors[1]


def test_frame_receives_the_seed_and_pinch(ladder_grid, monkeypatch):
    seen = {}
    real = stage.normal_frame

    def recording(v, count, **kwargs):
        seen.update(kwargs)
        return real(v, count, **kwargs)

    monkeypatch.setattr(stage, "normal_frame", recording)
    u = flat_inclusion(ladder_grid, 8)
    rho = ScalarField(ladder_grid, np.full(ladder_grid.shape, 0.15))
    params = StageParams(delta=0.09, lam=50.0, tau=1.5)
    perform_stage(u, rho, _zero(ladder_grid), identity_metric(ladder_grid), params, rng_seed=7)
    assert seen["rng_seed"] == 7
    assert seen["gamma"] == pytest.approx(params.gamma * (1 + params.slack))
    assert seen["seeds"] is None


@pytest.mark.slow
def test_ladder_exponents(ladder_grid):
    lams = [50.0, 100.0, 200.0]
    results = []
    for lam in lams:
        u, rho, H, G = flat_benchmark(ladder_grid, 0.09, lam)
        results.append(perform_stage(u, rho, H, G, StageParams(delta=0.09, lam=lam, tau=1.5, C0=4.0)))
    fit = ladder_fit(results, lams, 1.5)
    assert fit.slopes["E_c0"] == pytest.approx(-1.0, abs=0.3)
    assert fit.slopes["v_minus_u_c0"] == pytest.approx(-1.5, abs=0.3)
    assert fit.slopes["v_c2"] == pytest.approx(1.5, abs=0.3)
    assert fit.c1_spread < 2.0
