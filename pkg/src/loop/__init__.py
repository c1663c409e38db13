"""Closed-loop step workflow."""

from src.loop.graph import create_loop_graph, get_loop_graph, run_closed_loop
from src.loop.state import Controller, LoopContext, LoopState, StepRecord, create_initial_state

__all__ = [
    "Controller",
    "LoopContext",
    "LoopState",
    "StepRecord",
    "create_initial_state",
    "create_loop_graph",
    "get_loop_graph",
    "run_closed_loop",
]
