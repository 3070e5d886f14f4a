import logging

import pytest

from fwigan.environment import FwiGanEnvironment


def test_threads_unset_by_default(monkeypatch):
    monkeypatch.delenv("FWIGAN_THREADS", raising=False)

    assert FwiGanEnvironment().threads is None


def test_threads_from_the_environment(monkeypatch):
    monkeypatch.setenv("FWIGAN_THREADS", "3")

    assert FwiGanEnvironment().threads == 3


@pytest.mark.parametrize("value", ["zero", "0", "-2"])
def test_invalid_thread_counts(monkeypatch, value):
    monkeypatch.setenv("FWIGAN_THREADS", value)

    with pytest.raises(ValueError, match="FWIGAN_THREADS"):
        FwiGanEnvironment().threads


def test_log_level(monkeypatch):
    monkeypatch.delenv("FWIGAN_LOG_LEVEL", raising=False)
    assert FwiGanEnvironment().log_level == logging.INFO

    monkeypatch.setenv("FWIGAN_LOG_LEVEL", "debug")
    assert FwiGanEnvironment().log_level == logging.DEBUG

    monkeypatch.setenv("FWIGAN_LOG_LEVEL", "chatty")
    with pytest.raises(ValueError):
        FwiGanEnvironment().log_level


def test_tracking_settings(monkeypatch):
    monkeypatch.delenv("FWIGAN_MLFLOW_TRACKING_URI", raising=False)
    monkeypatch.delenv("FWIGAN_EXPERIMENT_NAME", raising=False)
    environment = FwiGanEnvironment()

    assert environment.mlflow_tracking_uri is None
    assert environment.experiment_name == "fwigan"

    monkeypatch.setenv("FWIGAN_MLFLOW_TRACKING_URI", "file:///tmp/mlruns")
    assert environment.mlflow_tracking_uri == "file:///tmp/mlruns"
