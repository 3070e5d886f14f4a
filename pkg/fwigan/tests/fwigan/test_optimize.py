import math

import numpy as np
import pytest
from pydantic import ValidationError

from fwigan import optimize, presets
from fwigan.config import ClipKind, ClipRule, TrainConfig
from fwigan.critic import Critic, CriticConfig
from fwigan.modelzoo import gaussian_smooth
from fwigan.optimize import (
    AdamState,
    adam_step,
    clip,
    clip_global,
    lr_at,
    run_fwi,
    run_fwigan,
)

TINY_CRITIC = dict(base_channels=2, n_blocks=2, fc_width=8)


def _fwi_config(**overrides) -> TrainConfig:
    settings = dict(epochs=2, batch_size=2, lr_v=20.0)
    settings.update(overrides)
    return presets.load("fwi", **settings)


def _fwigan_config(**overrides) -> TrainConfig:
    settings = dict(epochs=1, batch_size=2, n_critic=2, **TINY_CRITIC)
    settings.update(overrides)
    return presets.load("fwigan", **settings)


class RecordingSink:
    def __init__(self):
        self.records = []

    def log_epoch(self, record, metrics) -> None:
        self.records.append((record, metrics))


def test_first_adam_step_moves_by_the_learning_rate():
    state = AdamState.zeros((2,))

    updated = adam_step(state, np.zeros(2), np.array([2.0, -3.0]), lr=0.1)

    np.testing.assert_allclose(updated, [-0.1, 0.1], rtol=1e-6)
    assert state.step == 1


def test_adam_rejects_mismatched_gradients():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros((2,)), np.zeros(2), np.zeros(3), lr=0.1)


def test_clip_by_value_and_by_norm():
    grad = np.array([3.0, -40.0])

    np.testing.assert_array_equal(clip(grad, ClipRule(kind=ClipKind.VALUE, limit=10.0)), [3.0, -10.0])

    scaled = clip(np.array([3.0, 4.0]), ClipRule(kind=ClipKind.NORM, limit=1.0))
    np.testing.assert_allclose(scaled, [0.6, 0.8])

    untouched = clip(np.array([0.3, 0.4]), ClipRule(kind=ClipKind.NORM, limit=1.0))
    np.testing.assert_array_equal(untouched, [0.3, 0.4])


def test_clip_global_uses_the_joint_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}

    clipped = clip_global(grads, ClipRule(kind=ClipKind.NORM, limit=2.5))

    assert clipped["a"][0] == pytest.approx(1.5)
    assert clipped["b"][0] == pytest.approx(2.0)


def test_step_schedule_halves_at_each_milestone():
    assert lr_at(0, 5.0, [100, 200]) == 5.0
    assert lr_at(99, 5.0, [100, 200]) == 5.0
    assert lr_at(100, 5.0, [100, 200]) == 2.5
    assert lr_at(199, 5.0, [100, 200]) == 2.5
    assert lr_at(200, 5.0, [100, 200]) == 1.25


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(milestones=[200, 100])

    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)

    with pytest.raises(ValueError, match="does not divide"):
        TrainConfig(batch_size=3).check_shots(8)


def test_zero_learning_rates_leave_everything_untouched(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)

    run = run_fwi(_fwi_config(lr_v=0.0, lr_f=0.0), observed, init, 12.0)

    np.testing.assert_array_equal(run.model.values, init.values)
    assert run.f_peak == 12.0
    assert len(run.history) == 2


def test_fwi_reruns_are_bit_identical(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)
    cfg = _fwi_config(seed=4)

    first = run_fwi(cfg, observed, init, 12.0)
    second = run_fwi(cfg, observed, init, 12.0)

    assert first.history_hash() == second.history_hash()
    np.testing.assert_array_equal(first.model.values, second.model.values)


def test_every_shot_is_simulated_once_per_epoch(inversion_case, mocker):
    truth, observed, _ = inversion_case
    spy = mocker.spy(optimize, "forward")

    run_fwi(_fwi_config(epochs=1), observed, gaussian_smooth(truth, 3.0), 15.0)

    assert spy.call_count == 2
    cells = [cell for call in spy.call_args_list for cell in call.args[2].source_cells]
    assert sorted(cells) == sorted(observed.geometry.source_cells)


def test_fwi_keeps_the_model_inside_its_bounds(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)

    run = run_fwi(_fwi_config(lr_v=2000.0, clip_v=ClipRule(kind=ClipKind.VALUE, limit=1e9)), observed, init, 15.0)

    assert run.model.values.min() >= init.v_min
    assert run.model.values.max() <= init.v_max
    assert 0.5 <= run.f_peak <= 0.9 * 0.5 / observed.dt


def test_frozen_rows_never_change(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)

    run = run_fwi(_fwi_config(frozen_top_rows=3), observed, init, 15.0)

    np.testing.assert_array_equal(run.model.values[:3], init.values[:3])
    assert not np.array_equal(run.model.values[3:], init.values[3:])


def test_inverting_noise_free_data_of_the_start_model_changes_nothing(inversion_case):
    truth, observed, _ = inversion_case

    run = run_fwi(_fwi_config(), observed, truth, 15.0, truth=truth)

    np.testing.assert_array_equal(run.model.values, truth.values)
    assert all(record.misfit == 0.0 for record in run.history)
    assert run.metric_history[-1].error <= run.metric_history[0].error + 1e-6


def test_metrics_and_tracker_follow_every_epoch(inversion_case):
    truth, observed, _ = inversion_case
    sink = RecordingSink()

    run = run_fwi(_fwi_config(), observed, gaussian_smooth(truth, 3.0), 15.0, truth=truth, tracker=sink)

    assert [m.epoch for m in run.metric_history] == [0, 1, 2]
    assert [r.epoch for r, _ in sink.records] == [0, 1]
    assert sink.records[-1][1].epoch == 2


def test_inversion_rejects_inconsistent_inputs(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)

    with pytest.raises(ValueError, match="not fwi"):
        run_fwi(_fwigan_config(), observed, init, 15.0)

    with pytest.raises(ValueError, match="does not divide"):
        run_fwi(_fwi_config(batch_size=3), observed, init, 15.0)

    with pytest.raises(ValueError, match="Nyquist"):
        run_fwi(_fwi_config(), observed, init, 600.0)


def test_fwigan_updates_model_critic_and_losses(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)
    cfg = _fwigan_config()
    fresh = Critic.build(
        CriticConfig(in_channels=2, input_h=observed.nt, input_w=observed.geometry.n_g, **TINY_CRITIC),
        seed=cfg.seed,
    )

    run = run_fwigan(cfg, observed, init, 15.0)

    record = run.history[0]
    assert all(
        math.isfinite(value) for value in (record.critic_loss, record.wasserstein, record.gen_loss)
    )
    assert record.misfit is None
    assert run.critic.params.digest() != fresh.params.digest()
    assert not np.array_equal(run.model.values, init.values)
    assert run.c > 0


def test_fwigan_reruns_are_bit_identical(inversion_case):
    truth, observed, _ = inversion_case
    init = gaussian_smooth(truth, 3.0)
    cfg = _fwigan_config(seed=9)

    first = run_fwigan(cfg, observed, init, 15.0)
    second = run_fwigan(cfg, observed, init, 15.0)

    assert first.history_hash() == second.history_hash()
    np.testing.assert_array_equal(first.model.values, second.model.values)
    assert first.critic.params.digest() == second.critic.params.digest()


def test_fwigan_learns_the_noise_level(inversion_case):
    truth, observed, _ = inversion_case
    cfg = _fwigan_config(learn_noise=True, init_snr_db=15.0)

    run = run_fwigan(cfg, observed, gaussian_smooth(truth, 3.0), 15.0)

    assert run.snr_db != 15.0
    assert math.isfinite(run.snr_db)
    assert run.history[-1].snr_db == run.snr_db

    with pytest.raises(ValueError, match="finite"):
        run_fwigan(cfg, observed, truth, 15.0, init_snr=math.inf)


def test_fwigan_rejects_a_critic_of_the_wrong_size(inversion_case):
    truth, observed, _ = inversion_case
    critic = Critic.build(
        CriticConfig(in_channels=1, input_h=observed.nt, input_w=observed.geometry.n_g, **TINY_CRITIC),
        seed=0,
    )

    with pytest.raises(ValueError, match="Critic expects"):
        run_fwigan(_fwigan_config(), observed, truth, 15.0, critic=critic)
