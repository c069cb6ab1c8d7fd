import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snse_lab.noise import NoiseModel
from snse_lab.solvers import SimConfig
from snse_lab.spectral import default_grid, single_mode_field


@pytest.fixture(scope="session")
def grid3():
    return default_grid(3)


@pytest.fixture(scope="session")
def grid1():
    return default_grid(1)


@pytest.fixture(scope="session")
def noise3(grid3):
    return NoiseModel(grid=grid3)


@pytest.fixture(scope="session")
def noise1(grid1):
    return NoiseModel(grid=grid1, num_directions=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def linear_config(grid1, noise1):
    """Single-pair diagonal regime: no advection, unit-mode initial state."""
    return SimConfig(
        grid=grid1,
        noise=noise1,
        horizon=0.5,
        dt=1e-3,
        epsilon=0.0,
        initial=single_mode_field(grid1, (1, 0), (0.0, 1.0)),
        nonlinear=False,
        record_stride=25,
    )
