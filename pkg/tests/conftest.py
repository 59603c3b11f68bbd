import numpy as np
import pytest

from corrugation.fields import flat_inclusion, make_grid


@pytest.fixture
def unit_grid():
    return make_grid(1.0, 64)


@pytest.fixture
def periodic_grid():
    return make_grid(1.0, 64, periodicity=True)


@pytest.fixture
def ladder_grid():
    """Flat benchmark chart: 0.03 wide at 256 nodes per axis."""
    return make_grid(0.03, 256)


@pytest.fixture
def flat_map(unit_grid):
    return flat_inclusion(unit_grid, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
