"""
Logging helpers for staticfuse.
"""

from __future__ import annotations

import logging

# Configuration
DEFAULT_LOG_LEVEL = logging.INFO
DEFAULT_LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
LOG_LEVEL_NAMES = ("DEBUG", "INFO", "WARNING", "ERROR")


def parse_log_level(name: str) -> int:
    """
    Translate a level name such as ``"debug"`` into its logging constant.

    Parameters
    ----------
    name:
        Case-insensitive level name, one of ``LOG_LEVEL_NAMES``.
    """
    level_name = name.upper()
    if level_name not in LOG_LEVEL_NAMES:
        raise ValueError(f"Unknown log level {name!r}, expected one of {LOG_LEVEL_NAMES}")
    return getattr(logging, level_name)


def configure_logging(level: int = DEFAULT_LOG_LEVEL, fmt: str = DEFAULT_LOG_FORMAT) -> None:
    """
    Configure root logging with a consistent formatter.

    Parameters
    ----------
    level:
        Logging level for the root logger.
    fmt:
        Format string applied to log records.
    """
    logging.basicConfig(level=level, format=fmt, force=False)
    logging.getLogger().setLevel(level)
