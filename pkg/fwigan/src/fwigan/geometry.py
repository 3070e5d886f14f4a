import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

DEFAULT_V_MIN = 1000.0
DEFAULT_V_MAX = 6000.0


class Grid2D(BaseModel):
    """A class to hold the discretized spatial domain.

    Storage is [depth rows x lateral columns]; dx is the isotropic cell size in km."""

    nz: int = Field(..., ge=8)
    nx: int = Field(..., ge=8)
    dx: float = Field(..., gt=0, description="Cell size in km")

    model_config = ConfigDict(frozen=True)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nz, self.nx)

    @property
    def dx_m(self) -> float:
        """Cell size in metres."""
        return self.dx * 1000.0

    def depths_km(self) -> np.ndarray:
        return np.arange(self.nz) * self.dx

    def contains(self, cell: tuple[int, int]) -> bool:
        iz, ix = cell
        return 0 <= iz < self.nz and 0 <= ix < self.nx


class VelocityModel(BaseModel):
    """A class to hold a P-wave velocity grid (m/s) together with its clamp bounds."""

    grid: Grid2D
    values: np.ndarray
    v_min: float = Field(default=DEFAULT_V_MIN, gt=0)
    v_max: float = Field(default=DEFAULT_V_MAX, gt=0)

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("values", mode="before")
    @classmethod
    def copy_values(cls, values) -> np.ndarray:
        copied = np.array(values, dtype=np.float64, copy=True)
        copied.setflags(write=False)
        return copied

    @model_validator(mode="after")
    def check_bounds(self):
        if self.v_max < self.v_min:
            raise ValueError(
                f"v_max ({self.v_max}) must not be below v_min ({self.v_min})"
            )

        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"Velocity array shape {self.values.shape} does not match grid {self.grid.shape}"
            )

        outside = ~np.isfinite(self.values) | (self.values < self.v_min) | (
            self.values > self.v_max
        )
        if outside.any():
            iz, ix = np.argwhere(outside)[0]
            raise ValueError(
                f"Velocity {self.values[iz, ix]} at cell (iz={iz}, ix={ix}) is outside "
                f"[{self.v_min}, {self.v_max}] m/s"
            )

        return self

    def with_values(self, values: np.ndarray) -> "VelocityModel":
        """Return a model on the same grid and bounds holding new values."""
        return VelocityModel(
            grid=self.grid, values=values, v_min=self.v_min, v_max=self.v_max
        )


class AcquisitionGeometry(BaseModel):
    """A class to hold source and receiver cells as (depth_index, lateral_index) pairs."""

    grid: Grid2D
    source_cells: tuple[tuple[int, int], ...] = Field(..., min_length=1)
    receiver_cells: tuple[tuple[int, int], ...] = Field(..., min_length=1)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_cells(self):
        for kind, cells in (
            ("source", self.source_cells),
            ("receiver", self.receiver_cells),
        ):
            for cell in cells:
                if not self.grid.contains(cell):
                    raise ValueError(f"{kind} cell {cell} lies outside the grid")

        return self

    @property
    def n_s(self) -> int:
        return len(self.source_cells)

    @property
    def n_g(self) -> int:
        return len(self.receiver_cells)

    def subset(self, shots) -> "AcquisitionGeometry":
        """Geometry restricted to the given shot indices, receivers unchanged."""
        return AcquisitionGeometry(
            grid=self.grid,
            source_cells=tuple(self.source_cells[int(i)] for i in shots),
            receiver_cells=self.receiver_cells,
        )


def surface_layout(
    grid: Grid2D, n_shots: int, shot_depth: int = 0
) -> AcquisitionGeometry:
    """Place sources evenly along a row and one receiver per lateral column.

    Args:
    ----
        grid (Grid2D): The discretized domain.
        n_shots (int): Number of sources.
        shot_depth (int): Depth index shared by sources and receivers.

    Returns:
    -------
        AcquisitionGeometry: Sources at floor(i*(nx-1)/(n_shots-1)), a single shot at nx//2.
    """
    if n_shots < 1:
        raise ValueError("At least one shot is required")
    if n_shots > grid.nx:
        raise ValueError(
            f"Cannot place {n_shots} shots on a grid with {grid.nx} lateral cells"
        )
    if not 0 <= shot_depth < grid.nz:
        raise ValueError(f"Shot depth {shot_depth} is outside [0, {grid.nz})")

    if n_shots == 1:
        lateral = [grid.nx // 2]
    else:
        lateral = [(i * (grid.nx - 1)) // (n_shots - 1) for i in range(n_shots)]

    return AcquisitionGeometry(
        grid=grid,
        source_cells=tuple((shot_depth, ix) for ix in lateral),
        receiver_cells=tuple((shot_depth, ix) for ix in range(grid.nx)),
    )


def clamp_values(values: np.ndarray, v_min: float, v_max: float) -> np.ndarray:
    return np.clip(values, v_min, v_max)


def clamp_model(m: VelocityModel) -> VelocityModel:
    """Clamp every cell into [v_min, v_max]. Idempotent."""
    return m.with_values(clamp_values(np.asarray(m.values), m.v_min, m.v_max))
