"""Core utilities and configuration for the DMPSC toolkit."""

from src.core.config import Settings, get_settings, settings
from src.core.log import configure_logging
from src.core.retry import RetryConfig, SolveOutcome, solve_with_fallback

__all__ = [
    "Settings",
    "get_settings",
    "settings",
    "configure_logging",
    "RetryConfig",
    "SolveOutcome",
    "solve_with_fallback",
]
