import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class Wavelet(BaseModel):
    """A class to hold a sampled, dimensionless source time function."""

    nt: int = Field(..., ge=1)
    dt: float = Field(..., gt=0, description="Sample interval in s")
    samples: np.ndarray
    f_peak: float = Field(..., gt=0, description="Peak frequency in Hz")
    t0: float = Field(default=0.0, ge=0, description="Delay in s")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("samples", mode="before")
    @classmethod
    def as_float_array(cls, samples) -> np.ndarray:
        return np.asarray(samples, dtype=np.float64)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    def scaled(self, factor: float) -> "Wavelet":
        return self.model_copy(update={"samples": self.samples * factor})


def _check(f: float, dt: float, t0: float | None) -> None:
    if f <= 0:
        raise ValueError(f"Peak frequency must be positive, got {f}")
    if dt <= 0:
        raise ValueError(f"Sample interval must be positive, got {dt}")
    if t0 is not None and t0 < 0:
        raise ValueError(f"Delay must be non-negative, got {t0}")
    if f * dt >= 0.5:
        raise ValueError(
            f"Peak frequency {f} Hz is above the Nyquist limit {0.5 / dt} Hz for dt={dt}"
        )


def default_t0(f: float, dt: float) -> float:
    """1/f snapped to the nearest sample, so the sampled peak is exactly 1."""
    _check(f, dt, None)
    return round(1.0 / (f * dt)) * dt


def _tau(nt: int, dt: float, t0: float) -> np.ndarray:
    return np.arange(nt) * dt - t0


def ricker(f: float, nt: int, dt: float, t0: float | None = None) -> Wavelet:
    """Ricker wavelet w = (1 - 2a) exp(-a), a = (pi f tau)^2, tau = t - t0.

    t0 defaults to 1/f rounded to the nearest sample."""
    _check(f, dt, t0)
    t0 = default_t0(f, dt) if t0 is None else t0

    a = (np.pi * f * _tau(nt, dt, t0)) ** 2
    samples = (1.0 - 2.0 * a) * np.exp(-a)

    return Wavelet(nt=nt, dt=dt, samples=samples, f_peak=f, t0=t0)


def ricker_df(f: float, nt: int, dt: float, t0: float | None = None) -> Wavelet:
    """Partial derivative of the Ricker wavelet with respect to f, t0 held fixed.

    dw/df = 2a (2a - 3) exp(-a) / f."""
    _check(f, dt, t0)
    t0 = default_t0(f, dt) if t0 is None else t0

    a = (np.pi * f * _tau(nt, dt, t0)) ** 2
    samples = 2.0 * a * (2.0 * a - 3.0) * np.exp(-a) / f

    return Wavelet(nt=nt, dt=dt, samples=samples, f_peak=f, t0=t0)
