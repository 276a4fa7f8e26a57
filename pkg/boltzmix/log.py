"""Logging setup. Every record carries the ``boltzmix - `` prefix."""

import logging
import os

LOG_PREFIX = "boltzmix - "
LOG_LEVEL = os.environ.get("BOLTZMIX_LOG_LEVEL", "INFO").upper()

_configured = False


def _configure_root():
    global _configured
    if _configured:
        return
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_PREFIX + "%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("boltzmix")
    root.addHandler(handler)
    root.setLevel(getattr(logging, LOG_LEVEL, logging.INFO))
    root.propagate = False
    _configured = True


def get_logger(name: str) -> logging.Logger:
    """Return a child of the package logger, configuring the handler once."""
    _configure_root()
    if not name.startswith("boltzmix"):
        name = f"boltzmix.{name}"
    return logging.getLogger(name)


def set_level(level: str) -> None:
    """Override the level picked from BOLTZMIX_LOG_LEVEL."""
    _configure_root()
    logging.getLogger("boltzmix").setLevel(getattr(logging, level.upper(), logging.INFO))
