import numpy as np
import pytest

from fwigan.geometry import AcquisitionGeometry, Grid2D, VelocityModel, surface_layout
from fwigan.modelzoo import layered
from fwigan.propagator import forward, sponge_profile
from fwigan.source import ricker

# Small grid: 10 m cells, 1 ms steps, Courant 0.3 against the 3000 m/s bound.
DX_KM = 0.01
DT = 0.001
F_PEAK = 15.0
V_MAX = 3000.0


@pytest.fixture
def small_grid() -> Grid2D:
    return Grid2D(nz=12, nx=16, dx=DX_KM)


@pytest.fixture
def homogeneous(small_grid) -> VelocityModel:
    return VelocityModel(
        grid=small_grid,
        values=np.full(small_grid.shape, 2000.0),
        v_min=1000.0,
        v_max=V_MAX,
    )


@pytest.fixture
def heterogeneous(small_grid) -> VelocityModel:
    rng = np.random.default_rng(3)
    values = 2000.0 + 300.0 * rng.uniform(-1.0, 1.0, size=small_grid.shape)
    return VelocityModel(grid=small_grid, values=values, v_min=1000.0, v_max=V_MAX)


@pytest.fixture
def two_shots(small_grid) -> AcquisitionGeometry:
    return AcquisitionGeometry(
        grid=small_grid,
        source_cells=((2, 3), (5, 11)),
        receiver_cells=tuple((1, ix) for ix in range(0, 16, 2)),
    )


@pytest.fixture
def wavelet():
    return ricker(F_PEAK, 120, DT, t0=0.07)


@pytest.fixture
def sponge(small_grid):
    return sponge_profile(small_grid, V_MAX, width=4)


@pytest.fixture
def inversion_case(small_grid):
    """Layered truth, its smoothed start and noise-free data from four surface shots."""
    truth = layered(small_grid, [0.5], [1800.0, 2400.0], v_min=1000.0, v_max=V_MAX)
    geometry = surface_layout(small_grid, 4)
    w = ricker(F_PEAK, 150, DT)
    observed, _ = forward(truth, w, geometry, sponge_profile(small_grid, V_MAX, width=20))
    return truth, observed, w
