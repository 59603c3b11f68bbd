import numpy as np
import pytest

from corrugation.errors import DefectBlowup, LayerUnresolved, NotAdmissible, ShortnessLost
from corrugation.extend import (
    ExtensionParams,
    adapted_extension,
    check_admissible,
    defect_density,
    isometric_extension,
    layer_cutoff,
    short_extension,
    sigma_data,
)
from corrugation.problems import circle_problem
from corrugation.verify import connection_gap


@pytest.fixture(scope="module")
def circle():
    return circle_problem(radius=0.25, epsilon=0.1, resolution=(128, 32))


def test_circle_margin_is_the_curvature(circle):
    sd, _ = circle
    np.testing.assert_allclose(check_admissible(sd), 4.0, rtol=1e-12)


def test_binormal_direction_is_not_admissible(circle):
    sd, collar = circle
    mu = np.zeros_like(sd.mu)
    mu[:, 2] = 1.0
    binormal = sigma_data(sd.f, mu, sd.L, collar, df=sd.df, dmu=np.zeros_like(mu), d2f=sd.Lbar)
    with pytest.raises(NotAdmissible) as info:
        check_admissible(binormal)
    assert info.value.exit_code == 3


def test_short_extension_defect_near_sigma(circle):
    sd, collar = circle
    u = short_extension(sd, collar)
    g = collar.metric().values
    J = u.jacobian
    defect = g - np.einsum("...ki,...kj->...ij", J, J)
    t = collar.grid.axis(1)[1]
    np.testing.assert_allclose(defect[:, 1, 0, 0] / t, 8.0, rtol=2e-2)
    np.testing.assert_allclose(defect[:, 1, 1, 1] / t, 4.0 - 4.0 * t, rtol=1e-9)
    assert np.abs(defect[:, 1, 0, 1]).max() < 1e-12


def test_defect_density_vanishes_on_sigma(circle):
    sd, collar = circle
    rho = defect_density(short_extension(sd, collar), collar.metric()).values
    assert rho[:, 0].max() < 1e-7
    t = collar.grid.axis(1)[1]
    np.testing.assert_allclose(rho[:, 1] ** 2 / t, 6.0, rtol=2e-2)


def test_deep_collar_loses_shortness():
    sd, collar = circle_problem(radius=0.25, epsilon=1.0, resolution=(64, 16))
    with pytest.raises(ShortnessLost):
        short_extension(sd, collar)


def test_layer_squares_sum_to_one():
    eps = 0.1
    t = np.linspace(eps / 4, eps, 50)
    total = layer_cutoff(t, eps, 1, 2) ** 2 + layer_cutoff(t, eps, 2, 2) ** 2
    np.testing.assert_allclose(total, 1.0, atol=1e-12)
    assert layer_cutoff(np.array([0.0]), eps, 1, 1)[0] == 0.0


def test_too_many_layers_for_the_grid(circle):
    sd, collar = circle
    with pytest.raises(LayerUnresolved):
        adapted_extension(sd, collar, ExtensionParams(layers=4))


@pytest.mark.slow
def test_one_layer_extension_of_the_circle():
    sd, collar = circle_problem()
    triple, report = adapted_extension(sd, collar, ExtensionParams())
    assert report.margin_min == pytest.approx(4.0)
    assert report.normals == "shared"
    assert len(report.layers) == 1
    layer = report.layers[0]
    assert 60.0 < layer.lam < 80.0
    assert 1.0 < layer.tau <= 1.5
    assert report.boundary_pinned
    assert report.rho_slope == pytest.approx(0.5, abs=0.1)
    gap = connection_gap(triple.u, sd)
    np.testing.assert_allclose(gap.gap, 4.0, rtol=1e-2)


@pytest.mark.slow
def test_collar_iteration_reports_its_final_defect():
    sd, collar = circle_problem()
    with pytest.raises(DefectBlowup) as info:
        isometric_extension(sd, collar, ExtensionParams(), Q_max=4)
    details = info.value.details
    # rho ~ sqrt(t) at the curve makes the first stage amplitude too steep for the collar grid
    assert details["levels_completed"] < 4
    assert details["stop_reason"] is not None
    assert details["final_defect_sup"] > 1e-3
    assert details["layer_h_sup"] >= 0.0
    assert info.value.exit_code == 4
