"""
Console logging in the `[TAG] message` style used across the package
"""

import logging
import os
import sys

BANNER = "=" * 60

_CONFIGURED = False


def configure_logging(level=None):
    """Install the single stderr handler; safe to call repeatedly"""
    global _CONFIGURED
    level = level or os.getenv("PROXYAD_LOG_LEVEL", "INFO")
    root = logging.getLogger("proxyad")
    root.setLevel(level.upper() if isinstance(level, str) else level)
    if _CONFIGURED:
        return root
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(tag)s] %(message)s"))
    handler.addFilter(_TagFilter())
    root.addHandler(handler)
    root.propagate = False
    _CONFIGURED = True
    return root


class _TagFilter(logging.Filter):
    def filter(self, record):
        record.tag = record.name.rsplit(".", 1)[-1]
        return True


def get_logger(tag):
    return logging.getLogger(f"proxyad.{tag.upper()}")
