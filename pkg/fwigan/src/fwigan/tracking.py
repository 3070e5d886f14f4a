import logging
from typing import Any

from tenacity import retry, stop_after_attempt, wait_exponential

from fwigan.optimize import EpochRecord, MetricRecord

logger = logging.getLogger(__name__)


class InversionTracker:
    """mlflow tracking of inversion runs: parameters once, losses and metrics per epoch."""

    def __init__(self, tracking_uri: str | None, experiment_name: str = "fwigan"):
        """Initialize mlflow tracking.

        Args:
            tracking_uri: Where mlflow stores runs; mlflow's default when None.
            experiment_name: Name of the mlflow experiment.
        """
        try:
            import mlflow
        except ImportError as e:
            raise ValueError(
                "Tracking needs mlflow; install the 'tracking' extra of fwigan"
            ) from e

        self._mlflow = mlflow
        self.experiment_name = experiment_name
        self.setup_mlflow(tracking_uri)

    @retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=1, max=8))
    def setup_mlflow(self, tracking_uri: str | None) -> None:
        if tracking_uri:
            self._mlflow.set_tracking_uri(tracking_uri)

        if self._mlflow.get_experiment_by_name(self.experiment_name) is None:
            experiment_id = self._mlflow.create_experiment(self.experiment_name)
            logger.info(
                "Created new experiment: %s with ID: %s", self.experiment_name, experiment_id
            )
        else:
            logger.info("Using existing experiment: %s", self.experiment_name)

        self._mlflow.set_experiment(self.experiment_name)

    def start(self, run_name: str, params: dict[str, Any]) -> None:
        self._mlflow.start_run(run_name=run_name)
        self._mlflow.log_params({k: str(v) for k, v in params.items()})

    @retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=1, max=8))
    def _log_metrics(self, metrics: dict[str, float], step: int) -> None:
        self._mlflow.log_metrics(metrics, step=step)

    def log_epoch(self, record: EpochRecord, metrics: MetricRecord | None) -> None:
        values = record.model_dump(exclude={"epoch"}, exclude_none=True)
        if metrics is not None:
            values.update(metrics.model_dump(exclude={"epoch"}, exclude_none=True))

        try:
            self._log_metrics(values, record.epoch)
        except Exception as e:
            logger.warning("Failed to log epoch %d to mlflow: %s", record.epoch, e)

    def log_artifact(self, path: str) -> None:
        try:
            self._mlflow.log_artifact(path)
        except Exception as e:
            logger.warning("Failed to log artifact %s: %s", path, e)

    def finish(self) -> None:
        self._mlflow.end_run()
