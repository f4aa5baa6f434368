"""Runtime settings for reactive-motion-synth."""

import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from app.models.errors import ConfigError

PRECISIONS = ("float64", "float32")


class Config:
    """Process-level settings: logging, directories, threads and precision.

    Numerical settings live in the pydantic models of ``app.models.configs``;
    this class only covers what comes from the environment.
    """

    def __init__(
        self,
        *,
        debug: bool | None = None,
        log_level: str | None = None,
        data_dir: Path | str | None = None,
        logs_dir: Path | str | None = None,
        threads: int | None = None,
        dtype: str | None = None,
        env_file: Path | str | None = None,
        **kwargs: Any,
    ):
        """Initialize configuration.

        Args:
            debug: Enable debug mode
            log_level: Logging level
            data_dir: Directory for generated datasets
            logs_dir: Directory for log files
            threads: Worker threads for data generation and torch (REMOS_THREADS)
            dtype: Floating precision, "float64" or "float32" (REMOS_DTYPE)
            env_file: Optional .env file loaded before reading the environment
            **kwargs: Additional configuration options
        """
        load_dotenv(env_file, override=False)

        self.debug = (
            debug if debug is not None else self._get_bool_env("DEBUG", default=False)
        )
        self.log_level = (
            log_level if log_level is not None else os.getenv("LOG_LEVEL", "INFO")
        )
        self.threads = (
            threads if threads is not None else self._get_int_env("REMOS_THREADS", 1)
        )
        if self.threads < 1:
            msg = f"threads must be at least 1, got {self.threads}"
            raise ConfigError(msg)
        self.dtype = dtype if dtype is not None else os.getenv("REMOS_DTYPE", "float64")
        if self.dtype not in PRECISIONS:
            msg = f"dtype must be one of {PRECISIONS}, got '{self.dtype}'"
            raise ConfigError(msg)

        self.data_dir = (
            Path(data_dir) if data_dir else Path(os.getenv("DATA_DIR", "data"))
        )
        self.logs_dir = (
            Path(logs_dir) if logs_dir else Path(os.getenv("LOGS_DIR", "logs"))
        )

        for key, value in kwargs.items():
            setattr(self, key, value)

    def dict(self, exclude: set[str] | None = None) -> dict[str, Any]:
        """Convert config to dictionary representation.

        Args:
            exclude: Set of attribute names to exclude from the dict

        Returns:
            Dictionary representation of config
        """
        exclude = exclude or set()
        result = {}

        for attr_name in dir(self):
            if (
                attr_name.startswith("_")
                or callable(getattr(self, attr_name))
                or attr_name in exclude
            ):
                continue

            result[attr_name] = getattr(self, attr_name)

        return result

    def _get_bool_env(self, env_name: str, *, default: bool) -> bool:
        """Get boolean value from environment variable."""
        value = os.getenv(env_name)
        if value is None:
            return default
        return value.lower() in ("true", "1", "yes", "on")

    def _get_int_env(self, env_name: str, default: int) -> int:
        value = os.getenv(env_name)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            msg = f"{env_name} must be an integer, got '{value}'"
            raise ConfigError(msg) from None
