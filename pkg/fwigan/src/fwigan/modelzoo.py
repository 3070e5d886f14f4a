import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from fwigan.geometry import (
    DEFAULT_V_MAX,
    DEFAULT_V_MIN,
    Grid2D,
    VelocityModel,
    clamp_values,
)

logger = logging.getLogger(__name__)

SMOOTH_TRUNCATE = 4.0

DESK_INTERFACES = (0.35, 0.7)
DESK_VELOCITIES = (1500.0, 2500.0, 3500.0)


def layered(
    grid: Grid2D,
    interfaces: Sequence[float],
    velocities: Sequence[float],
    v_min: float = DEFAULT_V_MIN,
    v_max: float = DEFAULT_V_MAX,
) -> VelocityModel:
    """Piecewise-constant-in-depth model; interface k starts at row floor(frac_k * nz).

    Args:
    ----
        grid (Grid2D): Target grid.
        interfaces (Sequence[float]): Strictly increasing depth fractions in (0, 1).
        velocities (Sequence[float]): One velocity per layer, top to bottom, in m/s.

    Returns:
    -------
        VelocityModel: The layered model.
    """
    if len(velocities) != len(interfaces) + 1:
        raise ValueError(
            f"{len(interfaces)} interfaces need {len(interfaces) + 1} velocities, "
            f"got {len(velocities)}"
        )
    if any(not 0.0 < frac < 1.0 for frac in interfaces):
        raise ValueError("Interfaces must lie strictly inside (0, 1)")
    if any(b <= a for a, b in zip(interfaces, interfaces[1:])):
        raise ValueError("Interfaces must be strictly increasing")

    bounds = [0] + [math.floor(frac * grid.nz) for frac in interfaces] + [grid.nz]
    values = np.empty(grid.shape)
    for top, bottom, velocity in zip(bounds, bounds[1:], velocities):
        values[top:bottom] = velocity

    return VelocityModel(grid=grid, values=values, v_min=v_min, v_max=v_max)


def desk_model(v_min: float = DEFAULT_V_MIN, v_max: float = DEFAULT_V_MAX) -> VelocityModel:
    """40x80 grid at 30 m with three layers of 1500, 2500 and 3500 m/s."""
    return layered(
        Grid2D(nz=40, nx=80, dx=0.03),
        DESK_INTERFACES,
        DESK_VELOCITIES,
        v_min=v_min,
        v_max=v_max,
    )


def gaussian_smooth(m: VelocityModel, sigma: float) -> VelocityModel:
    """Gaussian-blurred copy with reflective edges, truncated at 4 sigma and clamped."""
    if sigma < 0:
        raise ValueError("Smoothing sigma must be non-negative")
    if sigma == 0:
        return m.with_values(np.array(m.values))

    smoothed = gaussian_filter(
        np.asarray(m.values), sigma=sigma, mode="reflect", truncate=SMOOTH_TRUNCATE
    )
    return m.with_values(clamp_values(smoothed, m.v_min, m.v_max))


def linear_model(
    grid: Grid2D,
    v0: float,
    beta: float,
    v_min: float = DEFAULT_V_MIN,
    v_max: float = DEFAULT_V_MAX,
) -> VelocityModel:
    """v(z) = v0 + beta * z with z in km and beta in m/s per km, clamped into bounds."""
    values = np.broadcast_to(
        v0 + beta * grid.depths_km()[:, None], grid.shape
    ).copy()

    clipped = clamp_values(values, v_min, v_max)
    if not np.array_equal(clipped, values):
        logger.warning(
            "Linear model v0=%s beta=%s leaves [%s, %s] m/s; clamping", v0, beta, v_min, v_max
        )

    return VelocityModel(grid=grid, values=clipped, v_min=v_min, v_max=v_max)


def load_raw_grid(
    path: Path,
    nz: int,
    nx: int,
    dx: float,
    v_min: float = DEFAULT_V_MIN,
    v_max: float = DEFAULT_V_MAX,
) -> VelocityModel:
    """Read a row-major little-endian float32 grid of nz x nx velocities in m/s."""
    path = Path(path)
    payload = path.read_bytes()
    expected = nz * nx * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path} holds {len(payload)} bytes, expected {expected} for a {nz}x{nx} grid"
        )

    values = np.frombuffer(payload, dtype="<f4").reshape(nz, nx).astype(np.float64)

    return VelocityModel(
        grid=Grid2D(nz=nz, nx=nx, dx=dx), values=values, v_min=v_min, v_max=v_max
    )


def save_raw_grid(m: VelocityModel, path: Path) -> Path:
    path = Path(path)
    path.write_bytes(np.asarray(m.values, dtype="<f4").tobytes())
    return path
