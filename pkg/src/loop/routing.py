"""Routing logic for the closed-loop conditional edges."""

from typing import Literal

import structlog

from src.loop.state import LoopState

logger = structlog.get_logger(__name__)


def route_after_certify(state: LoopState) -> Literal["apply", "fallback"]:
    result = state.get("result")
    if result is not None and result.status == "fallback":
        return "fallback"
    return "apply"


def should_continue_or_end(state: LoopState) -> Literal["continue", "end"]:
    """End after ``steps`` applied inputs."""
    if state["t"] >= state["steps"]:
        logger.debug("Run finished", steps=state["steps"], fallbacks=state["fallbacks"])
        return "end"
    return "continue"
