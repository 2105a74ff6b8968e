"""Logging configuration helpers for the retention-stream tools."""
from __future__ import annotations

import logging
import os
import time
from contextlib import contextmanager
from typing import Iterator

LOG_LEVEL_ENV = "RETENTION_STREAM_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


def _coerce_level(level: str | int) -> int:
    """Translate a user provided level into a numeric log level."""

    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(level.upper())
    if not isinstance(resolved, int):
        raise ValueError(f"Unknown log level: {level}")
    return resolved


def configure_logging(level: str | int | None = None, *, force: bool = False) -> None:
    """Configure the root logger for console output.

    Without an explicit ``level`` the ``RETENTION_STREAM_LOG_LEVEL`` environment variable
    is consulted, falling back to INFO for missing or unknown names.
    """

    requested = level if level is not None else os.getenv(LOG_LEVEL_ENV, "INFO")
    try:
        resolved_level = _coerce_level(requested)
    except ValueError:
        resolved_level = logging.INFO

    root_logger = logging.getLogger()
    if root_logger.handlers and not force:
        root_logger.setLevel(resolved_level)
        return

    logging.basicConfig(level=resolved_level, format=LOG_FORMAT, force=force)


@contextmanager
def log_duration(logger: logging.Logger, label: str) -> Iterator[None]:
    """Log the wall time spent inside the block at DEBUG level."""

    started = time.perf_counter()
    try:
        yield
    finally:
        logger.debug("%s took %.3f s", label, time.perf_counter() - started)


__all__ = ["configure_logging", "log_duration", "LOG_LEVEL_ENV"]
