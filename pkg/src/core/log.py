"""structlog configuration shared by the CLI and long-running experiments."""

import logging
import sys

import structlog

from src.core.config import settings


def _stderr_logger(*args: object) -> structlog.PrintLogger:
    # resolved per call so a replaced sys.stderr is picked up
    return structlog.PrintLogger(file=sys.stderr)


def configure_logging(level: str | None = None, fmt: str | None = None) -> None:
    """
    Configure structlog processors and the stdlib root level.

    Events are always written to the current ``sys.stderr``; stdout is left
    to command output.

    Args:
        level: Log level name (defaults to ``settings.log_level``)
        fmt: ``json`` or ``console`` (defaults to ``settings.log_format``)
    """
    level = (level or settings.log_level).upper()
    fmt = (fmt or settings.log_format).lower()

    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level)

    renderer: structlog.types.Processor
    if fmt == "json":
        renderer = structlog.processors.JSONRenderer()
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty())

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(logging.getLevelName(level)),
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )
