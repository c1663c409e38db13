"""LangGraph node functions of the closed loop."""

from typing import Any

import numpy as np
import structlog

from src.certifier import advance_session
from src.loop.state import LoopState, StepRecord
from src.netmodel import step_truth

logger = structlog.get_logger(__name__)


def propose_node(state: LoopState) -> dict[str, Any]:
    """Query the policy for u_L(t)."""
    context = state["context"]
    if context.controller == "rdmpc":
        return {"u_L": np.zeros(context.model.m)}
    u_L = np.asarray(context.propose(state["x"], state["t"]), dtype=float).reshape(-1)
    return {"u_L": u_L}


def certify_node(state: LoopState) -> dict[str, Any]:
    """Filter u_L through the certifier (certified, rdmpc) or pass it on (raw)."""
    context = state["context"]
    if context.controller == "raw":
        return {"result": None, "u_applied": state["u_L"]}

    result = context.certifier.certify(state["session"], state["x"], state["u_L"])
    logger.debug(
        "Step certified",
        t=state["t"],
        status=result.status,
        objective=result.objective,
        solve_ms=result.solve_ms,
    )
    return {"result": result, "u_applied": result.u_cert}


def fallback_node(state: LoopState) -> dict[str, Any]:
    """Count and report a step that used the stored candidate."""
    logger.warning("Applying fallback input", t=state["t"], controller=state["context"].controller)
    return {"fallbacks": state["fallbacks"] + 1}


def apply_node(state: LoopState) -> dict[str, Any]:
    """Draw w(t), step the plant and record the step."""
    context = state["context"]
    model = context.model
    x, u = state["x"], state["u_applied"]
    w = context.disturbance(context.rng)
    x_next = step_truth(model, x, u, w)

    result, session = state["result"], state["session"]
    if session is not None:
        beta, alpha = session.beta.copy(), session.alpha.copy()
    else:
        beta, alpha = np.full(model.M, np.nan), np.full(model.M, np.nan)
    record = StepRecord(
        t=state["t"],
        x=x.copy(),
        u_L=state["u_L"].copy(),
        u_cert=np.asarray(u, dtype=float).copy(),
        w=w,
        beta=beta,
        alpha=alpha,
        status="raw" if result is None else result.status,
        stage_cost=context.stage_costs(x, u),
        solve_ms=0.0 if result is None else result.solve_ms,
    )
    if context.controller != "raw" and (model.state_violation(x_next) > 1e-9 or model.input_violation(u) > 1e-9):
        logger.warning("Constraint violated under certification", t=state["t"])
    return {"w": w, "x_next": x_next, "records": [record]}


def advance_node(state: LoopState) -> dict[str, Any]:
    """Move time, state and session forward."""
    update: dict[str, Any] = {"t": state["t"] + 1, "x": state["x_next"]}
    if state["session"] is not None and state["result"] is not None:
        update["session"] = advance_session(state["session"], state["x_next"], state["result"])
    return update
