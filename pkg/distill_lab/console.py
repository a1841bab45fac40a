"""Logging setup shared by the CLI and the tool server."""

import logging
import sys

LOG_FORMAT = "%(levelname)s: %(message)s"

_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def configure_logging(verbosity: int = 1) -> None:
    """
    Install a single stderr handler on the root logger.

    Args:
        verbosity: 0 for warnings only, 1 for progress lines, 2+ for debug output

    Stdout is left alone: the MCP stdio transport and the CLI error records use it.
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_distill_lab", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._distill_lab = True
    root.addHandler(handler)
    root.setLevel(_LEVELS.get(verbosity, logging.DEBUG))
