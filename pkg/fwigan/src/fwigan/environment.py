import logging
import os

from dotenv import find_dotenv, load_dotenv


class FwiGanEnvironment:
    """This class is used to get the environment variables for fwigan runs."""

    def __init__(self):
        """Initialize the FwiGanEnvironment class, reading a .env file when one exists."""
        load_dotenv(find_dotenv())

    @property
    def threads(self) -> int | None:
        """This function returns the shot-level thread count.

        Returns:
            int | None: FWIGAN_THREADS, or None when unset
        """
        value = os.environ.get("FWIGAN_THREADS")
        if value is None or value.strip() == "":
            return None

        try:
            threads = int(value)
        except ValueError:
            raise ValueError(f"FWIGAN_THREADS must be an integer, got {value!r}")

        if threads < 1:
            raise ValueError(f"FWIGAN_THREADS must be at least 1, got {threads}")

        return threads

    @property
    def log_level(self) -> int:
        """This function returns the logging level.

        Returns:
            int: The level named by FWIGAN_LOG_LEVEL, INFO by default
        """
        name = os.environ.get("FWIGAN_LOG_LEVEL", "INFO").upper()
        level = logging.getLevelName(name)
        if not isinstance(level, int):
            raise ValueError(f"Invalid log level {name}")

        return level

    @property
    def mlflow_tracking_uri(self) -> str | None:
        return os.environ.get("FWIGAN_MLFLOW_TRACKING_URI")

    @property
    def experiment_name(self) -> str:
        return os.environ.get("FWIGAN_EXPERIMENT_NAME", "fwigan")
