import numpy as np
import pytest

from corrugation.errors import FailsMetricBounds, PreconditionError
from corrugation.fields import MapField, flat_inclusion, make_grid
from corrugation.frames import normal_frame
from corrugation.iterate import clifford_torus


def _graph_map(grid, amplitude, k):
    X1, X2 = grid.mesh()
    values = np.zeros(grid.shape + (8,))
    values[..., 0], values[..., 1] = X1, X2
    values[..., 2] = amplitude * np.sin(2 * np.pi * k * X1) * np.cos(2 * np.pi * X2)
    values[..., 3] = amplitude * np.cos(2 * np.pi * k * X2)
    return MapField(grid, values)


def _graph_tangents(grid, amplitude, k):
    """Closed-form d/dx1 and d/dx2 of _graph_map, shape (n1, n2, 8, 2)."""
    X1, X2 = grid.mesh()
    w = 2 * np.pi
    J = np.zeros(grid.shape + (8, 2))
    J[..., 0, 0] = J[..., 1, 1] = 1.0
    J[..., 2, 0] = amplitude * w * k * np.cos(w * k * X1) * np.cos(w * X2)
    J[..., 2, 1] = -amplitude * w * np.sin(w * k * X1) * np.sin(w * X2)
    J[..., 3, 1] = -amplitude * w * k * np.sin(w * k * X2)
    return J


def test_flat_inclusion_frame_is_the_coordinate_complement(flat_map):
    frame = normal_frame(flat_map, 6)
    assert frame.quality.seeds == "coordinate"
    assert frame.quality.orthogonality_defect <= 1e-10
    assert frame.quality.tangency_defect <= 1e-10
    np.testing.assert_allclose(np.abs(frame.member(0)[..., 2]), 1.0, atol=1e-12)


@pytest.mark.parametrize("amplitude,k", [(0.02, 1), (0.01, 2)])
def test_graph_frames_are_normal_to_the_exact_tangents(amplitude, k):
    grid = make_grid(1.0, 128)
    frame = normal_frame(_graph_map(grid, amplitude, k), 6)
    assert frame.quality.orthogonality_defect <= 1e-10
    assert frame.quality.continuity_defect < 0.5
    exact = np.einsum("...ck,...kj->...cj", frame.vectors, _graph_tangents(grid, amplitude, k))
    assert np.abs(exact).max() <= 10 * grid.h ** 2


def test_frames_rotate_with_the_ambient_space(rng):
    grid = make_grid(1.0, 64)
    u = _graph_map(grid, 0.02, 1)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    seeds = np.eye(8)[2:8]
    frame = normal_frame(u, 6, seeds=seeds)
    turned = normal_frame(MapField(grid, u.values @ Q.T), 6, seeds=seeds @ Q.T)
    np.testing.assert_allclose(turned.vectors, frame.vectors @ Q.T, atol=1e-10)


def test_reseeding_with_the_frame_returns_it():
    grid = make_grid(1.0, 64)
    u = _graph_map(grid, 0.02, 1)
    frame = normal_frame(u, 6)
    again = normal_frame(u, 6, seeds=frame.vectors)
    np.testing.assert_allclose(again.vectors, frame.vectors, atol=1e-12)


def test_too_many_normals_are_refused(flat_map):
    with pytest.raises(PreconditionError):
        normal_frame(flat_map, 7)


def test_pinch_bound_is_enforced(unit_grid):
    with pytest.raises(FailsMetricBounds):
        normal_frame(flat_inclusion(unit_grid, 8, scale=2.0), 6, gamma=1.5)


def test_per_node_seeds_frame_the_torus(periodic_grid):
    u, seeds = clifford_torus(periodic_grid, scale=0.5)
    frame = normal_frame(u, 6, seeds=seeds)
    assert frame.quality.seeds == "given"
    assert frame.quality.orthogonality_defect <= 1e-10
    assert frame.quality.tangency_defect <= 1e-10


def _last_coordinate_plane(grid):
    """Flat map into coordinates 6 and 7, where the default seeds lose rank."""
    X1, X2 = grid.mesh()
    values = np.zeros(grid.shape + (8,))
    values[..., 6], values[..., 7] = X1, X2
    return MapField(grid, values)


def test_random_fallback_follows_the_seed(unit_grid):
    u = _last_coordinate_plane(unit_grid)
    first = normal_frame(u, 6, rng_seed=1)
    same = normal_frame(u, 6, rng_seed=1)
    other = normal_frame(u, 6, rng_seed=2)
    assert first.quality.seeds == "random"
    assert first.quality.tangency_defect <= 1e-10
    np.testing.assert_array_equal(first.vectors, same.vectors)
    assert np.abs(first.vectors - other.vectors).max() > 1e-3
