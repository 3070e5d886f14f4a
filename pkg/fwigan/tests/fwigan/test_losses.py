import math

import numpy as np
import pytest
from scipy.stats import kurtosis

from fwigan.losses import (
    add_awgn,
    choose_c,
    generator_upstream,
    gradient_penalty,
    l2_misfit,
    maxabs_normalize,
    maxabs_normalize_vjp,
    normalize,
    normalize_vjp,
    sample_learned_noise,
    wgan_losses,
)
from fwigan.nn import Tensor
from fwigan.propagator import ShotGathers


class LinearCritic:
    """D(x) = <w, x>, so grad_x D = w everywhere."""

    def __init__(self, weight: np.ndarray):
        self.weight = Tensor(weight, requires_grad=True)

    def score_tensor(self, x: Tensor) -> Tensor:
        return (x * self.weight).sum()


def _weight_with_norm(norm: float, shape=(2, 3, 4)) -> np.ndarray:
    w = np.zeros(shape)
    w[0, 0, 0] = norm
    return w


def _fd(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += h
        minus[idx] -= h
        out[idx] = (fn(plus) - fn(minus)) / (2 * h)
    return out


def test_gradient_penalty_of_a_steep_linear_critic():
    penalty, norm = gradient_penalty(LinearCritic(_weight_with_norm(3.0)), np.zeros((2, 3, 4)), 10.0)

    assert norm == pytest.approx(3.0)
    assert abs(penalty.item() - 40.0) < 1e-10


def test_gradient_penalty_vanishes_for_a_unit_slope_critic():
    penalty, _ = gradient_penalty(LinearCritic(_weight_with_norm(1.0)), np.ones((2, 3, 4)), 10.0)

    assert abs(penalty.item()) < 1e-10


def test_identical_batches_have_zero_wasserstein_estimate():
    rng = np.random.default_rng(0)
    real = rng.uniform(size=(2, 3, 4))
    critic = LinearCritic(rng.standard_normal((2, 3, 4)))

    losses = wgan_losses(critic, real, real.copy(), np.array([0.3, 0.8]), lam=10.0)

    assert losses.wasserstein == 0.0
    assert losses.critic_loss == pytest.approx(losses.penalty)


def test_wgan_losses_accumulate_critic_gradients():
    rng = np.random.default_rng(1)
    real, fake = rng.uniform(size=(2, 2, 3, 4))
    w = rng.standard_normal((2, 3, 4))
    critic = LinearCritic(w)

    losses = wgan_losses(critic, real, fake, np.array([0.5, 0.5]), lam=10.0)

    norm = np.linalg.norm(w)
    expected = fake - real + 2.0 * 10.0 * (norm - 1.0) * w / norm
    np.testing.assert_allclose(critic.weight.grad, expected, rtol=1e-9)
    np.testing.assert_allclose(losses.generator_upstream, -w)
    assert losses.generator_loss == pytest.approx(-np.sum(w * fake))
    assert losses.grad_norm == pytest.approx(norm)


def test_wgan_losses_without_accumulation_leave_grads_alone():
    rng = np.random.default_rng(2)
    real, fake = rng.uniform(size=(2, 2, 3, 4))
    critic = LinearCritic(rng.standard_normal((2, 3, 4)))

    losses = wgan_losses(critic, real, fake, np.array([0.1, 0.9]), lam=10.0, accumulate=False)

    assert critic.weight.grad is None
    np.testing.assert_allclose(losses.generator_upstream, -critic.weight.data)


def test_wgan_losses_validate_inputs():
    critic = LinearCritic(np.ones((2, 3, 4)))
    batch = np.ones((2, 3, 4))

    with pytest.raises(ValueError):
        wgan_losses(critic, batch, batch, np.array([0.5]), lam=10.0)

    with pytest.raises(ValueError):
        wgan_losses(critic, batch, batch, np.array([0.5, 0.5]), lam=-1.0)


def test_generator_upstream_of_linear_critic():
    w = np.random.default_rng(3).standard_normal((2, 3, 4))
    fake = np.ones((2, 3, 4))

    loss, upstream = generator_upstream(LinearCritic(w), fake)

    assert loss == pytest.approx(-w.sum())
    np.testing.assert_allclose(upstream, -w)


def test_normalize_shifts_and_rescales_each_gather():
    out = normalize(np.array([[[-1.0, 1.0]]]), 1.1)

    np.testing.assert_allclose(out, [[[0.1 / 2.2, 2.1 / 2.2]]])
    assert out.sum() == pytest.approx(1.0)


def test_normalize_needs_positive_shifted_entries_unless_floored():
    x = np.array([[[-2.0, 1.0]]])

    with pytest.raises(ValueError, match="non-positive"):
        normalize(x, 1.1)

    floored = normalize(x, 1.1, floor=1e-3)
    assert np.all(floored > 0)
    assert floored.sum() == pytest.approx(1.0)


def test_normalize_vjp_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 4))
    c = choose_c(x).c
    upstream = rng.standard_normal(x.shape)

    analytic = normalize_vjp(x, c, upstream)

    fd = _fd(lambda v: float(np.sum(upstream * normalize(v, c))), x)
    np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-9)


def test_floored_normalize_vjp_ignores_clamped_entries():
    x = np.array([[[-5.0, 1.0, 2.0]]])
    upstream = np.array([[[1.0, 2.0, 3.0]]])

    g = normalize_vjp(x, 1.1, upstream, floor=1e-3)

    assert g[0, 0, 0] == 0.0
    assert g[0, 0, 1] != 0.0


def test_choose_c_makes_observed_data_positive():
    data = np.array([[[-2.0, 0.5], [1.0, 3.0]]])

    c = choose_c(data).c

    assert c == pytest.approx(2.2)
    assert np.all(data + c > 0)


def test_choose_c_falls_back_when_the_minimum_is_zero():
    c = choose_c(np.array([[[0.0, 4.0]]])).c

    assert 0.0 < c < 1e-4


def test_maxabs_normalize_and_its_gradient():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4))
    x[1] = 0.0
    upstream = rng.standard_normal(x.shape)

    out = maxabs_normalize(x)
    assert np.abs(out[0]).max() == pytest.approx(1.0)
    assert not out[1].any()

    fd = _fd(lambda v: float(np.sum(upstream[0] * maxabs_normalize(v))), x[0])
    np.testing.assert_allclose(maxabs_normalize_vjp(x, upstream)[0], fd, rtol=1e-6, atol=1e-9)
    assert not maxabs_normalize_vjp(x, upstream)[1].any()


def test_l2_misfit_value_and_residual(two_shots):
    rng = np.random.default_rng(6)
    obs = ShotGathers(data=rng.standard_normal((2, 5, two_shots.n_g)), dt=0.001, geometry=two_shots)
    sim = obs.with_data(obs.data + 0.5)

    value, residual = l2_misfit(sim, obs)

    assert value == pytest.approx(0.5 * 0.25 * obs.data.size)
    np.testing.assert_allclose(residual.data, 0.5)


def test_awgn_hits_the_requested_snr_exactly(two_shots):
    data = np.random.default_rng(7).standard_normal((2, 50, two_shots.n_g))
    clean = ShotGathers(data=data, dt=0.001, geometry=two_shots)

    noisy = add_awgn(clean, 10.0, seed=3)

    noise = noisy.data - clean.data
    snr = 20.0 * math.log10(np.linalg.norm(clean.data) / np.linalg.norm(noise))
    assert abs(snr - 10.0) < 1e-9
    np.testing.assert_array_equal(add_awgn(clean, 10.0, seed=3).data, noisy.data)


def test_awgn_without_snr_is_the_identity(two_shots):
    clean = ShotGathers(data=np.ones((2, 5, two_shots.n_g)), dt=0.001, geometry=two_shots)

    assert add_awgn(clean, None) is clean
    assert add_awgn(clean, math.inf) is clean


def test_learned_noise_derivative_matches_finite_differences():
    h = 1e-5

    noise, dnoise = sample_learned_noise((2, 3, 4), 20.0, 5.0, seed=1)
    plus, _ = sample_learned_noise((2, 3, 4), 20.0 + h, 5.0, seed=1)
    minus, _ = sample_learned_noise((2, 3, 4), 20.0 - h, 5.0, seed=1)

    assert noise.shape == (2, 3, 4)
    np.testing.assert_allclose(dnoise, (plus - minus) / (2 * h), rtol=1e-6, atol=1e-12)


def test_learned_noise_vanishes_at_infinite_snr():
    noise, dnoise = sample_learned_noise((2, 3), math.inf, 5.0, seed=1)

    assert not noise.any()
    assert not dnoise.any()


def test_learned_noise_matches_the_observed_noise_at_the_true_snr(two_shots):
    rng = np.random.default_rng(0)
    clean = ShotGathers(
        data=rng.standard_normal((2, 40, two_shots.n_g)), dt=0.001, geometry=two_shots
    )
    ref_norm = float(np.linalg.norm(clean.data))
    snr_db = 10.0
    target = ref_norm / 10.0 ** (snr_db / 20.0)
    seeds = range(400)

    learned = np.stack(
        [sample_learned_noise(clean.data.shape, snr_db, ref_norm, seed=1000 + s)[0] for s in seeds]
    )
    observed = np.stack([add_awgn(clean, snr_db, seed=s).data - clean.data for s in seeds])

    norms = np.linalg.norm(learned.reshape(len(seeds), -1), axis=1)
    assert norms.mean() == pytest.approx(target, rel=0.01)
    assert learned.std() == pytest.approx(observed.std(), rel=0.01)
    assert abs(kurtosis(learned.ravel())) < 0.1

    # A fixed linear critic cannot tell the two noise sources apart on average.
    w = rng.standard_normal(clean.data.shape)
    critic = LinearCritic(w)
    gap = np.array(
        [
            critic.score_tensor(Tensor(a)).item() - critic.score_tensor(Tensor(b)).item()
            for a, b in zip(learned, observed, strict=True)
        ]
    )
    alpha = target / math.sqrt(clean.data.size)
    assert abs(gap.mean()) < 5.0 * math.sqrt(2.0) * alpha * np.linalg.norm(w) / math.sqrt(len(seeds))
