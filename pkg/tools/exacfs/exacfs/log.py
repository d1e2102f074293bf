"""Logging setup: a rich handler on standard error, level from EXACFS_LOG."""

import logging
import os

from rich.console import Console
from rich.logging import RichHandler

LOG_ENV = "EXACFS_LOG"
LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_LEVEL = "info"


def get_log_level() -> str:
    """Level name from the environment, lower-cased; unknown values are returned as-is."""
    return os.getenv(LOG_ENV, DEFAULT_LEVEL).strip().lower()


def setup_logging() -> logging.Logger:
    """Attach a single RichHandler to the package logger; safe to call repeatedly."""
    logger = logging.getLogger("exacfs")
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.propagate = False

    name = get_log_level()
    logger.setLevel(LEVELS.get(name, LEVELS[DEFAULT_LEVEL]))
    if name not in LEVELS:
        logger.warning("%s=%r is not one of %s; using %s", LOG_ENV, name, ", ".join(LEVELS), DEFAULT_LEVEL)
    return logger
