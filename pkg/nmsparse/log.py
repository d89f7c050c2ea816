"""Logging setup for the command line tool."""

import logging
import os
import sys
from typing import Optional, Union

ENV_VAR = "NMSPARSE_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _validate_level(level: Union[int, str]) -> int:
    """Validate a log level given as a name or a number."""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).strip().upper())
    if not isinstance(value, int):
        raise ValueError(
            f"Invalid log level '{level}'. Valid options: DEBUG, INFO, WARNING, ERROR, CRITICAL"
        )
    return value


def configure_logging(level: Optional[Union[int, str]] = None) -> int:
    """Install a stderr handler on the ``nmsparse`` logger.

    The level comes from ``level``, else the ``NMSPARSE_LOG`` environment
    variable, else WARNING. Returns the level that was applied.
    """
    if level is None:
        level = os.environ.get(ENV_VAR, "WARNING")
    resolved = _validate_level(level)

    logger = logging.getLogger("nmsparse")
    for handler in list(logger.handlers):
        if getattr(handler, "_nmsparse", False):
            logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._nmsparse = True  # type: ignore[attr-defined]
    logger.addHandler(handler)
    logger.setLevel(resolved)
    return resolved
