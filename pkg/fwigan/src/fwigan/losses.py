import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fwigan import nn
from fwigan.critic import Scorer
from fwigan.nn import Tensor
from fwigan.propagator import ShotGathers

logger = logging.getLogger(__name__)

C_FACTOR = 1.1
_C_FALLBACK_FACTOR = 1e-6
_TINY = 1e-30
_NORM_EPS = 1e-12
_GATHER_AXES = (-2, -1)

RngLike = int | np.random.Generator


def _rng(seed: RngLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _data(x: ShotGathers | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, ShotGathers) else np.asarray(x, dtype=np.float64)


class NormalizationConstant(BaseModel):
    """Amplitude offset c that makes every shifted observed sample positive."""

    c: float = Field(..., gt=0)

    model_config = ConfigDict(frozen=True)


class NoiseParam(BaseModel):
    """Learnable noise level in dB together with the seed of its noise draws."""

    snr_db: float
    rng_seed: int = 0

    @property
    def finite(self) -> bool:
        return math.isfinite(self.snr_db)


def choose_c(observed: ShotGathers | np.ndarray) -> NormalizationConstant:
    """c = 1.1 * |min(observed)|, with a small positive fallback when the minimum is 0."""
    data = _data(observed)
    if not np.isfinite(data).all():
        raise ValueError("Observed data contain non-finite values")

    c = C_FACTOR * abs(float(data.min()))
    if c == 0.0:
        c = C_FACTOR * float(np.abs(data).max()) * _C_FALLBACK_FACTOR + _TINY
        logger.warning("Observed minimum is 0, falling back to c=%g", c)

    return NormalizationConstant(c=c)


def _shift(x: np.ndarray, c: float, floor: float | None) -> np.ndarray:
    shifted = x + c
    if floor is None:
        if (shifted <= 0).any():
            raise ValueError(
                f"Shifted data has non-positive entries (min {shifted.min():.3e}); c={c} is too small"
            )
        return shifted

    return np.maximum(shifted, floor)


def normalize(x: np.ndarray, c: float, floor: float | None = None) -> np.ndarray:
    """P(x) = (x + c) / sum(x + c) over each gather (the last two axes).

    Without a floor every shifted entry must be positive; with a floor, shifted entries are
    clamped from below before rescaling.
    """
    shifted = _shift(np.asarray(x, dtype=np.float64), c, floor)
    return shifted / shifted.sum(axis=_GATHER_AXES, keepdims=True)


def normalize_vjp(
    x: np.ndarray, c: float, upstream: np.ndarray, floor: float | None = None
) -> np.ndarray:
    """Gradient w.r.t. x of <upstream, normalize(x, c)>: (up - <up, P>) / S per gather."""
    x = np.asarray(x, dtype=np.float64)
    shifted = _shift(x, c, floor)
    total = shifted.sum(axis=_GATHER_AXES, keepdims=True)
    p = shifted / total
    projected = (upstream * p).sum(axis=_GATHER_AXES, keepdims=True)
    g = (upstream - projected) / total
    if floor is not None:
        g = np.where(x + c > floor, g, 0.0)

    return g


def maxabs_normalize(x: np.ndarray) -> np.ndarray:
    """Divide each gather by its maximum absolute value; all-zero gathers stay zero."""
    x = np.asarray(x, dtype=np.float64)
    scale = np.abs(x).max(axis=_GATHER_AXES, keepdims=True)
    return np.divide(x, scale, out=np.zeros_like(x), where=scale > 0)


def maxabs_normalize_vjp(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    batch_shape = x.shape[:-2]
    flat = x.reshape(*batch_shape, -1)
    up = upstream.reshape(*batch_shape, -1)

    k = np.abs(flat).argmax(axis=-1)[..., None]
    peak = np.take_along_axis(flat, k, axis=-1)
    scale = np.abs(peak)
    safe = np.where(scale > 0, scale, 1.0)

    g = up / safe
    correction = np.sign(peak) * (up * flat).sum(axis=-1, keepdims=True) / safe**2
    np.put_along_axis(g, k, np.take_along_axis(g, k, axis=-1) - correction, axis=-1)
    g = np.where(scale > 0, g, 0.0)

    return g.reshape(x.shape)


def l2_misfit(sim: ShotGathers, obs: ShotGathers) -> tuple[float, ShotGathers]:
    """0.5 * sum((sim - obs)^2) and the adjoint source sim - obs."""
    if sim.data.shape != obs.data.shape:
        raise ValueError(
            f"Simulated shape {sim.data.shape} does not match observed {obs.data.shape}"
        )

    residual = sim.data - obs.data
    return 0.5 * float(np.sum(residual**2)), sim.with_data(residual)


class WganLosses(BaseModel):
    """Critic objective terms for one batch and the generator upstream gradient."""

    critic_loss: float
    wasserstein: float = Field(..., description="D(fake) - D(real)")
    penalty: float
    grad_norm: float
    generator_loss: float = Field(..., description="-D(fake)")
    generator_upstream: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True)


def gradient_penalty(
    critic: Scorer, mixed: np.ndarray, lam: float
) -> tuple[Tensor, float]:
    """lam * (||grad_x D(x)||_2 - 1)^2 at x = mixed, differentiable w.r.t. the critic."""
    x = Tensor(mixed, requires_grad=True)
    (g,) = nn.grad(critic.score_tensor(x), [x], create_graph=True)
    norm = ((g * g).sum() + _NORM_EPS) ** 0.5

    return ((norm - 1.0) ** 2) * lam, norm.item()


def _check_batch(real: np.ndarray, fake: np.ndarray, mu: np.ndarray) -> None:
    if real.shape != fake.shape:
        raise ValueError(f"Real shape {real.shape} does not match fake {fake.shape}")
    if real.ndim != 3:
        raise ValueError(f"Expected [B, H, W] gathers, got shape {real.shape}")
    if mu.shape != (real.shape[0],):
        raise ValueError(f"Expected one mixing weight per gather, got shape {mu.shape}")


def wgan_losses(
    critic: Scorer,
    real_norm: np.ndarray,
    fake_norm: np.ndarray,
    mu: np.ndarray,
    lam: float,
    accumulate: bool = True,
) -> WganLosses:
    """D(fake) - D(real) + lam * (||grad D(x_hat)|| - 1)^2 with x_hat = mu real + (1 - mu) fake.

    mu holds one weight per gather channel. With accumulate the critic loss gradient is added
    to the .grad of every critic parameter.
    """
    if lam < 0:
        raise ValueError("Penalty weight must be non-negative")

    real_norm = np.asarray(real_norm, dtype=np.float64)
    fake_norm = np.asarray(fake_norm, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    _check_batch(real_norm, fake_norm, mu)

    fake = Tensor(fake_norm, requires_grad=True)
    d_real = critic.score_tensor(Tensor(real_norm))
    d_fake = critic.score_tensor(fake)

    weights = mu[:, None, None]
    mixed = weights * real_norm + (1.0 - weights) * fake_norm
    penalty, norm = gradient_penalty(critic, mixed, lam)

    loss = d_fake - d_real + penalty
    if accumulate:
        nn.backward(loss)
        d_fake_d_x = fake.grad if fake.grad is not None else np.zeros(fake.shape)
    else:
        d_fake_d_x = nn.grad(d_fake, [fake])[0].data

    return WganLosses(
        critic_loss=loss.item(),
        wasserstein=(d_fake - d_real).item(),
        penalty=penalty.item(),
        grad_norm=norm,
        generator_loss=-d_fake.item(),
        generator_upstream=-d_fake_d_x,
    )


def generator_upstream(critic: Scorer, fake_norm: np.ndarray) -> tuple[float, np.ndarray]:
    """-D(fake) and its gradient w.r.t. the normalized fake gathers."""
    fake = Tensor(fake_norm, requires_grad=True)
    d_fake = critic.score_tensor(fake)
    (g,) = nn.grad(d_fake, [fake])
    return -d_fake.item(), -g.data


def noise_scale(snr_db: float, ref_norm: float, size: int) -> float:
    """alpha = ref_norm * 10^(-snr/20) / sqrt(size)."""
    return ref_norm * 10.0 ** (-snr_db / 20.0) / math.sqrt(size)


def add_awgn(d: ShotGathers, snr_db: float | None, seed: RngLike = 0) -> ShotGathers:
    """Add white Gaussian noise scaled so that 20 log10(||d|| / ||n||) equals snr_db exactly."""
    if snr_db is None or math.isinf(snr_db):
        return d
    if math.isnan(snr_db):
        raise ValueError("SNR must not be NaN")

    eps = _rng(seed).standard_normal(d.data.shape)
    signal = float(np.linalg.norm(d.data))
    eps_norm = float(np.linalg.norm(eps))
    if signal == 0.0 or eps_norm == 0.0:
        logger.warning("Cannot set an SNR on all-zero data; returning it unchanged")
        return d

    noise = eps * (signal / (10.0 ** (snr_db / 20.0) * eps_norm))
    return d.with_data(d.data + noise)


def sample_learned_noise(
    shape: tuple[int, ...], snr_db: float, ref_norm: float, seed: RngLike
) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterized noise alpha * eps and its derivative w.r.t. snr_db.

    Returns:
    -------
        tuple[np.ndarray, np.ndarray]: (noise, d noise / d snr_db).
    """
    if not math.isfinite(snr_db):
        zeros = np.zeros(shape)
        return zeros, zeros.copy()

    eps = _rng(seed).standard_normal(shape)
    noise = noise_scale(snr_db, ref_norm, eps.size) * eps

    return noise, noise * (-math.log(10.0) / 20.0)
