"""Desk-scale inversions on the three-layer model; deselected unless run with -m slow."""

import pytest

from fwigan.geometry import surface_layout
from fwigan.losses import add_awgn
from fwigan.metrics import rel_error, ssim
from fwigan.modelzoo import desk_model, gaussian_smooth
from fwigan import presets
from fwigan.optimize import run_fwi, run_fwigan
from fwigan.propagator import forward, sponge_profile
from fwigan.source import ricker

pytestmark = pytest.mark.slow

NT = 1000
DT = 0.003
F_PEAK = 7.0


@pytest.fixture(scope="module")
def desk_case():
    truth = desk_model()
    geometry = surface_layout(truth.grid, 8)
    observed, _ = forward(
        truth, ricker(F_PEAK, NT, DT), geometry, sponge_profile(truth.grid, truth.v_max), threads=4
    )
    return truth, gaussian_smooth(truth, 8.0), observed


def test_least_squares_inversion_reduces_misfit_and_error(desk_case):
    truth, init, observed = desk_case
    cfg = presets.load("fwi", epochs=200, threads=4)

    run = run_fwi(cfg, observed, init, F_PEAK)

    assert run.history[-1].misfit < 0.1 * run.history[0].misfit
    assert rel_error(run.model, truth) < rel_error(init, truth)


def test_adversarial_inversion_improves_the_model(desk_case):
    truth, init, observed = desk_case
    cfg = presets.load(
        "fwigan", epochs=150, batch_size=4, n_critic=6, lam=10.0, lr_v=5.0, lr_c=1e-3,
        fc_width=256, threads=4,
    )

    run = run_fwigan(cfg, observed, init, F_PEAK)

    assert ssim(run.model, truth) > ssim(init, truth)
    assert rel_error(run.model, truth) < rel_error(init, truth)


def test_adversarial_histories_repeat_for_a_seed(desk_case):
    _, init, observed = desk_case
    cfg = presets.load("fwigan", epochs=3, batch_size=4, fc_width=256, seed=11, threads=4)

    first = run_fwigan(cfg, observed, init, F_PEAK)
    second = run_fwigan(cfg, observed, init, F_PEAK)

    assert first.history_hash() == second.history_hash()


def test_learned_noise_level_approaches_the_true_snr(desk_case):
    _, init, observed = desk_case
    noisy = add_awgn(observed, 10.0, seed=0)
    cfg = presets.load("fwigan", noisy=True, epochs=150, batch_size=4, fc_width=256, threads=4)

    run = run_fwigan(cfg, noisy, init, F_PEAK)

    assert run.snr_db == pytest.approx(10.0, abs=1.5)
