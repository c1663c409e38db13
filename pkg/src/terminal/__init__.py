"""Structured terminal set, terminal gains and time-varying local levels."""

from src.terminal.levels import (
    NegativeLevelError,
    TerminalCertificate,
    check_terminal_membership,
    update_alpha,
    verify_terminal,
)
from src.terminal.synthesis import (
    TerminalIngredients,
    TerminalSynthesisError,
    level_budget,
    synthesize_terminal,
)

__all__ = [
    "NegativeLevelError",
    "TerminalCertificate",
    "TerminalIngredients",
    "TerminalSynthesisError",
    "check_terminal_membership",
    "level_budget",
    "synthesize_terminal",
    "update_alpha",
    "verify_terminal",
]
