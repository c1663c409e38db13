"""LangGraph workflow of one closed-loop run."""

from typing import Optional

import numpy as np
import structlog
from langgraph.graph import END, StateGraph

from src.certifier import CertSession
from src.loop.nodes import (
    advance_node,
    apply_node,
    certify_node,
    fallback_node,
    propose_node,
)
from src.loop.routing import route_after_certify, should_continue_or_end
from src.loop.state import LoopContext, LoopState, StepRecord, create_initial_state

logger = structlog.get_logger(__name__)

NODES_PER_STEP = 5


def create_loop_graph():
    """
    Create the closed-loop workflow.

    Workflow per step:
    1. propose u_L(t)
    2. certify (or pass through for raw runs)
    3. fallback bookkeeping when the candidate input was used
    4. apply: disturbance, plant step, record
    5. advance the session; loop until T steps are done

    Returns:
        Compiled StateGraph ready for execution
    """
    workflow = StateGraph(LoopState)

    workflow.add_node("propose", propose_node)
    workflow.add_node("certify", certify_node)
    workflow.add_node("fallback", fallback_node)
    workflow.add_node("apply", apply_node)
    workflow.add_node("advance", advance_node)

    workflow.set_entry_point("propose")
    workflow.add_edge("propose", "certify")
    workflow.add_conditional_edges(
        "certify",
        route_after_certify,
        {
            "apply": "apply",
            "fallback": "fallback",
        },
    )
    workflow.add_edge("fallback", "apply")
    workflow.add_edge("apply", "advance")
    workflow.add_conditional_edges(
        "advance",
        should_continue_or_end,
        {
            "continue": "propose",
            "end": END,
        },
    )
    return workflow.compile()


_GRAPH = None


def get_loop_graph():
    """Compiled workflow, built once per process."""
    global _GRAPH
    if _GRAPH is None:
        _GRAPH = create_loop_graph()
    return _GRAPH


def run_closed_loop(
    context: LoopContext,
    x0: np.ndarray,
    steps: int,
    session: Optional[CertSession] = None,
) -> tuple[list[StepRecord], np.ndarray, int]:
    """
    Run ``steps`` closed-loop steps.

    Returns:
        Step records, final state x(T) and the number of fallback steps
    """
    if steps < 1:
        return [], np.asarray(x0, dtype=float).copy(), 0
    state = create_initial_state(context, x0, steps, session)
    final = get_loop_graph().invoke(
        state,
        config={"recursion_limit": NODES_PER_STEP * steps + 10},
    )
    return final["records"], final["x"], final["fallbacks"]
