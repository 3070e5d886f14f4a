import asyncio
import logging
import math
from typing import Callable, Sequence, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fwigan.geometry import AcquisitionGeometry, Grid2D, VelocityModel
from fwigan.source import Wavelet, ricker_df

logger = logging.getLogger(__name__)

# 4th-order space / 2nd-order time stability limit in 2D is 2/sqrt(32/3) ~ 0.612; 1% margin.
COURANT_LIMIT = 0.606

_C0 = -5.0 / 2.0
_C1 = 4.0 / 3.0
_C2 = -1.0 / 12.0

_FINITE_CHECK_EVERY = 50

T = TypeVar("T")


class CflViolationError(ValueError):
    """Raised when v_max * dt / dx exceeds the stability limit."""

    def __init__(self, ratio: float):
        self.ratio = ratio
        super().__init__(
            f"Courant number {ratio:.4f} exceeds the stability limit {COURANT_LIMIT}"
        )


class InstabilityError(ArithmeticError):
    """Raised when the wavefield becomes non-finite."""


class CflReport(BaseModel):
    ok: bool
    ratio: float


class ShotGathers(BaseModel):
    """A class to hold recorded seismograms as [shot x time x receiver]."""

    data: np.ndarray
    dt: float = Field(..., gt=0)
    geometry: AcquisitionGeometry

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @field_validator("data", mode="before")
    @classmethod
    def as_float_array(cls, data) -> np.ndarray:
        return np.asarray(data, dtype=np.float64)

    @model_validator(mode="after")
    def check_shape(self):
        if self.data.ndim != 3:
            raise ValueError(f"Gathers must be 3D, got shape {self.data.shape}")

        n_s, _, n_g = self.data.shape
        if n_s != self.geometry.n_s or n_g != self.geometry.n_g:
            raise ValueError(
                f"Gathers shape {self.data.shape} does not match geometry "
                f"(n_s={self.geometry.n_s}, n_g={self.geometry.n_g})"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("Gathers contain non-finite values")

        return self

    @property
    def nt(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "ShotGathers":
        return ShotGathers(data=data, dt=self.dt, geometry=self.geometry)

    def select(self, shots) -> "ShotGathers":
        shots = [int(i) for i in shots]
        return ShotGathers(
            data=self.data[shots], dt=self.dt, geometry=self.geometry.subset(shots)
        )


class Wavefields(BaseModel):
    """A class to hold every time slice of one shot on the padded grid."""

    snapshots: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True)


class SpongeProfile(BaseModel):
    """A class to hold the damping coefficients (1/s) of the absorbing layer.

    sigma covers the grid padded by width cells on every side."""

    width: int = Field(..., ge=0)
    sigma: np.ndarray
    sigma_max: float = Field(..., ge=0)

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


def check_cfl(v_max: float, dx: float, dt: float) -> CflReport:
    """Check the Courant number v_max * dt / dx (dx in metres) against the limit."""
    if v_max <= 0 or dx <= 0 or dt <= 0:
        raise ValueError("v_max, dx and dt must be positive")

    ratio = v_max * dt / dx
    return CflReport(ok=ratio <= COURANT_LIMIT, ratio=ratio)


def ensure_cfl(v_max: float, dx: float, dt: float) -> float:
    report = check_cfl(v_max, dx, dt)
    if not report.ok:
        raise CflViolationError(report.ratio)

    return report.ratio


def sponge_profile(
    grid: Grid2D, v_max: float, width: int = 20, sigma_max: float | None = None
) -> SpongeProfile:
    """Quadratic damping profile sigma(d) = sigma_max * (d / width)^2.

    sigma_max defaults to 3 * v_max * ln(1000) / (2 * width * dx)."""
    if width < 0:
        raise ValueError("Sponge width must be non-negative")

    if sigma_max is None:
        sigma_max = (
            3.0 * v_max * math.log(1000.0) / (2.0 * width * grid.dx_m) if width else 0.0
        )

    def ramp(n: int) -> np.ndarray:
        depth = np.zeros(n + 2 * width)
        if width:
            idx = np.arange(width)
            depth[:width] = (width - idx) / width
            depth[n + width :] = (idx + 1) / width
        return sigma_max * depth**2

    sigma = np.maximum(ramp(grid.nz)[:, None], ramp(grid.nx)[None, :])

    return SpongeProfile(width=width, sigma=sigma, sigma_max=sigma_max)


def laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order 5-point-per-axis Laplacian with zero values beyond the edges."""
    p = np.pad(u, 2)
    lap = (
        _C2 * (p[:-4, 2:-2] + p[4:, 2:-2] + p[2:-2, :-4] + p[2:-2, 4:])
        + _C1 * (p[1:-3, 2:-2] + p[3:-1, 2:-2] + p[2:-2, 1:-3] + p[2:-2, 3:-1])
        + 2.0 * _C0 * u
    )
    return lap / (dx * dx)


def _fold_padding(g: np.ndarray, width: int) -> np.ndarray:
    """Adjoint of np.pad(..., mode="edge")."""
    if width == 0:
        return g.copy()

    g = g.copy()
    g[width, :] += g[:width, :].sum(axis=0)
    g[-width - 1, :] += g[-width:, :].sum(axis=0)
    g[:, width] += g[:, :width].sum(axis=1)
    g[:, -width - 1] += g[:, -width:].sum(axis=1)

    return g[width:-width, width:-width]


class _Stencil:
    """Per-run constants of the damped leapfrog scheme on the padded grid.

    The damping term is centred in time,
    (1 + s) u^{n+1} = 2 u^n - (1 - s) u^{n-1} + a (L u^n + s^n) with s = sigma dt / 2,
    which stays stable for any sigma >= 0 once the Courant limit holds.
    """

    def __init__(
        self,
        m: VelocityModel,
        w: Wavelet,
        g: AcquisitionGeometry,
        sponge: SpongeProfile,
    ):
        if g.grid != m.grid:
            raise ValueError("Acquisition geometry and velocity model grids differ")

        width = sponge.width
        padded_shape = (m.grid.nz + 2 * width, m.grid.nx + 2 * width)
        if sponge.sigma.shape != padded_shape:
            raise ValueError(
                f"Sponge shape {sponge.sigma.shape} does not match padded grid {padded_shape}"
            )

        self.dx = m.grid.dx_m
        self.dt = w.dt
        ensure_cfl(m.v_max, self.dx, self.dt)

        self.width = width
        self.nt = w.nt
        self.v = np.pad(m.values, width, mode="edge")
        self.a = (self.v * self.dt) ** 2
        half_sigma_dt = 0.5 * sponge.sigma * self.dt
        self.inv_damp = 1.0 / (1.0 + half_sigma_dt)
        self.c1 = 2.0 * self.inv_damp
        self.c2 = (1.0 - half_sigma_dt) * self.inv_damp
        # Effective coefficient of (L u^n + s^n) after dividing through by (1 + s).
        self.b = self.a * self.inv_damp
        self.inv_dx2 = 1.0 / (self.dx * self.dx)
        self.samples = w.samples

        self.sources = [(iz + width, ix + width) for iz, ix in g.source_cells]
        rec = np.asarray(g.receiver_cells) + width
        self.rec_z = rec[:, 0]
        self.rec_x = rec[:, 1]
        self.n_g = g.n_g
        self.shape = padded_shape

    def injection(self, n: int) -> float:
        return self.samples[n] * self.inv_dx2

    def step(
        self, u_cur: np.ndarray, u_prev: np.ndarray, src: tuple[int, int], n: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Advance one step; returns (u_next, L u_cur + s^n)."""
        rhs = laplacian(u_cur, self.dx)
        rhs[src] += self.injection(n)
        return self.c1 * u_cur - self.c2 * u_prev + self.b * rhs, rhs


def _check_finite(u: np.ndarray, n: int, shot_cell: tuple[int, int]) -> None:
    if not np.isfinite(u).all():
        raise InstabilityError(
            f"Non-finite wavefield at step {n} for the source at padded cell {shot_cell}"
        )


def _simulate_shot(
    stencil: _Stencil, shot: int, keep: bool
) -> tuple[np.ndarray, np.ndarray | None]:
    src = stencil.sources[shot]
    traces = np.zeros((stencil.nt, stencil.n_g))
    snapshots = np.zeros((stencil.nt, *stencil.shape)) if keep else None

    u_prev = np.zeros(stencil.shape)
    u_cur = np.zeros(stencil.shape)
    for n in range(1, stencil.nt - 1):
        u_next, _ = stencil.step(u_cur, u_prev, src, n)

        if n % _FINITE_CHECK_EVERY == 0:
            _check_finite(u_next, n + 1, src)

        traces[n + 1] = u_next[stencil.rec_z, stencil.rec_x]
        if keep:
            snapshots[n + 1] = u_next
        u_prev, u_cur = u_cur, u_next

    _check_finite(traces, stencil.nt - 1, src)

    return traces, snapshots


def _tangent_shot(
    stencil: _Stencil,
    shot: int,
    delta_a: np.ndarray,
    delta_samples: np.ndarray,
) -> np.ndarray:
    src = stencil.sources[shot]
    traces = np.zeros((stencil.nt, stencil.n_g))

    u_prev = np.zeros(stencil.shape)
    u_cur = np.zeros(stencil.shape)
    du_prev = np.zeros(stencil.shape)
    du_cur = np.zeros(stencil.shape)
    for n in range(1, stencil.nt - 1):
        u_next, rhs = stencil.step(u_cur, u_prev, src, n)

        d_rhs = laplacian(du_cur, stencil.dx)
        d_rhs[src] += delta_samples[n] * stencil.inv_dx2
        du_next = (
            stencil.c1 * du_cur
            - stencil.c2 * du_prev
            + stencil.b * d_rhs
            + delta_a * stencil.inv_damp * rhs
        )

        traces[n + 1] = du_next[stencil.rec_z, stencil.rec_x]
        u_prev, u_cur = u_cur, u_next
        du_prev, du_cur = du_cur, du_next

    _check_finite(traces, stencil.nt - 1, src)

    return traces


def _adjoint_shot(
    stencil: _Stencil,
    shot: int,
    residual: np.ndarray,
    snapshots: np.ndarray,
    dw_df: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Reverse-time adjoint of one shot.

    lambda^k = c1 lambda^{k+1} + L(b lambda^{k+1}) - c2 lambda^{k+2} + R^T y^k,
    dJ/da += lambda^{k} (L u^{k-1} + s^{k-1}) / (1 + s)."""
    src = stencil.sources[shot]
    grad_a = np.zeros(stencil.shape)
    grad_f = 0.0

    lam_next = np.zeros(stencil.shape)
    lam_next2 = np.zeros(stencil.shape)
    for k in range(stencil.nt - 1, 1, -1):
        lam = (
            stencil.c1 * lam_next
            + laplacian(stencil.b * lam_next, stencil.dx)
            - stencil.c2 * lam_next2
        )
        np.add.at(lam, (stencil.rec_z, stencil.rec_x), residual[k])

        n = k - 1
        q = laplacian(snapshots[n], stencil.dx)
        q[src] += stencil.injection(n)
        grad_a += lam * stencil.inv_damp * q
        grad_f += lam[src] * stencil.b[src] * dw_df[n] * stencil.inv_dx2

        lam_next2, lam_next = lam_next, lam

    _check_finite(grad_a, 2, src)

    return grad_a, float(grad_f)


async def _map_shots(fn: Callable[[int], T], n_shots: int, threads: int) -> list[T]:
    semaphore = asyncio.Semaphore(max(1, threads))

    async def run(shot: int) -> T:
        async with semaphore:
            return await asyncio.to_thread(fn, shot)

    return await asyncio.gather(*(run(shot) for shot in range(n_shots)))


def _run_shots(fn: Callable[[int], T], n_shots: int, threads: int) -> list[T]:
    if threads <= 1 or n_shots == 1:
        return [fn(shot) for shot in range(n_shots)]

    return asyncio.run(_map_shots(fn, n_shots, threads))


def _pack(
    stencil: _Stencil,
    results: Sequence[tuple[np.ndarray, np.ndarray | None]],
    w: Wavelet,
    g: AcquisitionGeometry,
    keep_wavefields: bool,
) -> tuple[ShotGathers, list[Wavefields] | None]:
    data = np.stack([traces for traces, _ in results])
    gathers = ShotGathers(data=data, dt=w.dt, geometry=g)
    if not keep_wavefields:
        return gathers, None

    return gathers, [Wavefields(snapshots=snapshots) for _, snapshots in results]


def forward(
    m: VelocityModel,
    w: Wavelet,
    g: AcquisitionGeometry,
    sponge: SpongeProfile,
    keep_wavefields: bool = False,
    threads: int = 1,
) -> tuple[ShotGathers, list[Wavefields] | None]:
    """Simulate every shot of the geometry.

    Args:
    ----
        m (VelocityModel): Velocities in m/s.
        w (Wavelet): Source time function; its nt and dt define the time axis.
        g (AcquisitionGeometry): Sources and receivers.
        sponge (SpongeProfile): Absorbing layer around the model.
        keep_wavefields (bool): Retain padded snapshots per shot for the adjoint.
        threads (int): Shots run concurrently when greater than one.

    Returns:
    -------
        tuple[ShotGathers, list[Wavefields] | None]: Gathers and optional snapshots.
    """
    stencil = _Stencil(m, w, g, sponge)
    results = _run_shots(
        lambda shot: _simulate_shot(stencil, shot, keep_wavefields), g.n_s, threads
    )
    return _pack(stencil, results, w, g, keep_wavefields)


async def forward_async(
    m: VelocityModel,
    w: Wavelet,
    g: AcquisitionGeometry,
    sponge: SpongeProfile,
    keep_wavefields: bool = False,
    threads: int = 1,
) -> tuple[ShotGathers, list[Wavefields] | None]:
    stencil = _Stencil(m, w, g, sponge)
    results = await _map_shots(
        lambda shot: _simulate_shot(stencil, shot, keep_wavefields), g.n_s, threads
    )
    return _pack(stencil, results, w, g, keep_wavefields)


def jvp(
    m: VelocityModel,
    w: Wavelet,
    g: AcquisitionGeometry,
    sponge: SpongeProfile,
    delta_v: np.ndarray,
    delta_f: float = 0.0,
    threads: int = 1,
) -> ShotGathers:
    """Tangent-linear (Born) modelling: the Jacobian of forward applied to (delta_v, delta_f)."""
    delta_v = np.asarray(delta_v, dtype=np.float64)
    if delta_v.shape != m.grid.shape:
        raise ValueError(
            f"Perturbation shape {delta_v.shape} does not match grid {m.grid.shape}"
        )

    stencil = _Stencil(m, w, g, sponge)
    delta_a = 2.0 * stencil.v * np.pad(delta_v, stencil.width, mode="edge") * w.dt**2
    delta_samples = (
        delta_f * ricker_df(w.f_peak, w.nt, w.dt, w.t0).samples
        if delta_f
        else np.zeros(w.nt)
    )

    results = _run_shots(
        lambda shot: _tangent_shot(stencil, shot, delta_a, delta_samples),
        g.n_s,
        threads,
    )
    return ShotGathers(data=np.stack(results), dt=w.dt, geometry=g)


def vjp(
    m: VelocityModel,
    w: Wavelet,
    g: AcquisitionGeometry,
    sponge: SpongeProfile,
    adjoint_source: ShotGathers,
    wavefields: list[Wavefields] | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, float]:
    """Gradient of <adjoint_source, forward(m, w)> w.r.t. velocity and peak frequency.

    Forward snapshots are recomputed unless passed in from a previous forward call.

    Returns:
    -------
        tuple[np.ndarray, float]: grad_v on the model grid, grad_f as a scalar.
    """
    expected = (g.n_s, w.nt, g.n_g)
    if adjoint_source.data.shape != expected:
        raise ValueError(
            f"Adjoint source shape {adjoint_source.data.shape} does not match {expected}"
        )

    stencil = _Stencil(m, w, g, sponge)
    if wavefields is None:
        _, wavefields = forward(m, w, g, sponge, keep_wavefields=True, threads=threads)
    if len(wavefields) != g.n_s:
        raise ValueError(f"Expected {g.n_s} wavefields, got {len(wavefields)}")

    dw_df = ricker_df(w.f_peak, w.nt, w.dt, w.t0).samples
    results = _run_shots(
        lambda shot: _adjoint_shot(
            stencil,
            shot,
            adjoint_source.data[shot],
            wavefields[shot].snapshots,
            dw_df,
        ),
        g.n_s,
        threads,
    )

    grad_a = np.zeros(stencil.shape)
    grad_f = 0.0
    for shot_grad_a, shot_grad_f in results:
        grad_a += shot_grad_a
        grad_f += shot_grad_f

    grad_v = _fold_padding(grad_a * 2.0 * stencil.v * w.dt**2, stencil.width)

    return grad_v, grad_f
