import math

import numpy as np
from pydantic import BaseModel, field_validator
from skimage.metrics import structural_similarity

from fwigan.geometry import VelocityModel
from fwigan.propagator import ShotGathers

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11

ModelLike = VelocityModel | np.ndarray


def _values(m: ModelLike) -> np.ndarray:
    return np.asarray(m.values if isinstance(m, VelocityModel) else m, dtype=np.float64)


class MetricReport(BaseModel):
    ssim: float
    error: float
    snr_db: float | None = None

    @field_validator("ssim", "error")
    @classmethod
    def check_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("Metrics must be finite")
        return value


def ssim(
    v_hat: ModelLike, v: ModelLike, bounds: tuple[float, float] | None = None
) -> float:
    """Mean SSIM over 11x11 Gaussian windows (sigma 1.5) with c1=1e-4, c2=9e-4.

    The Gaussian weights stay 11 taps wide on small grids; only the averaged interior shrinks.

    Both models are rescaled to [0, 1] with the true model's min and max unless bounds are
    given; a constant true model is only shifted.
    """
    estimate, truth = _values(v_hat), _values(v)
    if estimate.shape != truth.shape:
        raise ValueError(f"Shape mismatch: {estimate.shape} vs {truth.shape}")
    if truth.ndim != 2:
        raise ValueError(f"SSIM needs 2D models, got shape {truth.shape}")

    # Grids narrower than the window average over a smaller, still odd, interior.
    side = min(truth.shape)
    win_size = min(SSIM_WINDOW, side if side % 2 else side - 1)

    lo, hi = bounds if bounds is not None else (truth.min(), truth.max())
    span = hi - lo if hi > lo else 1.0

    return float(
        structural_similarity(
            (estimate - lo) / span,
            (truth - lo) / span,
            data_range=1.0,
            win_size=win_size,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
        )
    )


def rel_error(v_hat: ModelLike, v: ModelLike) -> float:
    """||v - v_hat|| / ||v||."""
    estimate, truth = _values(v_hat), _values(v)
    if estimate.shape != truth.shape:
        raise ValueError(f"Shape mismatch: {estimate.shape} vs {truth.shape}")

    return float(np.linalg.norm(truth - estimate) / np.linalg.norm(truth))


def snr_db(reference: ShotGathers, noisy: ShotGathers) -> float:
    """20 log10(||d|| / ||noisy - d||); math.inf when they are identical."""
    if reference.data.shape != noisy.data.shape:
        raise ValueError(
            f"Shape mismatch: {reference.data.shape} vs {noisy.data.shape}"
        )

    noise = np.linalg.norm(noisy.data - reference.data)
    if noise == 0:
        return math.inf

    return float(20.0 * np.log10(np.linalg.norm(reference.data) / noise))


def evaluate(
    v_hat: ModelLike,
    v: ModelLike,
    reference: ShotGathers | None = None,
    noisy: ShotGathers | None = None,
) -> MetricReport:
    snr = None
    if reference is not None and noisy is not None:
        value = snr_db(reference, noisy)
        snr = value if math.isfinite(value) else None

    return MetricReport(ssim=ssim(v_hat, v), error=rel_error(v_hat, v), snr_db=snr)
