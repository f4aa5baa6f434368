"""Loguru sinks for the command-line entry point."""

import sys
from pathlib import Path

from loguru import logger

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}"


def setup_logging(level: str = "INFO", log_file: Path | str | None = None) -> None:
    """Replace the default sink with a formatted stderr sink and an optional file."""
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)
    if log_file is not None:
        path = Path(log_file)
        path.parent.mkdir(parents=True, exist_ok=True)
        logger.add(path, level="DEBUG", format=LOG_FORMAT, encoding="utf-8")
        logger.debug(f"Logging to {path}")
