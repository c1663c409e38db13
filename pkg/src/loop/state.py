"""Closed-loop state definitions for LangGraph."""

import operator
from dataclasses import dataclass
from typing import Annotated, Callable, Literal, Optional, TypedDict

import numpy as np

from src.certifier import CertResult, CertSession, SafetyCertifier
from src.netmodel import NetworkModel

Controller = Literal["raw", "certified", "rdmpc"]


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Everything observed at one closed-loop step."""

    t: int
    x: np.ndarray
    u_L: np.ndarray
    u_cert: np.ndarray
    w: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    status: str
    stage_cost: np.ndarray  # per subsystem
    solve_ms: float


@dataclass(frozen=True, eq=False)
class LoopContext:
    """
    Fixed ingredients of one run.

    ``propose(x, t)`` is the policy, ``disturbance(rng)`` draws a global w,
    ``stage_costs(x, u)`` returns the per-subsystem costs.
    """

    model: NetworkModel
    controller: Controller
    propose: Callable[[np.ndarray, int], np.ndarray]
    disturbance: Callable[[np.random.Generator], np.ndarray]
    stage_costs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    rng: np.random.Generator
    certifier: Optional[SafetyCertifier] = None


class LoopState(TypedDict):
    """
    State passed through the closed-loop workflow.

    One pass through the graph nodes is one time step.
    """

    context: LoopContext
    t: int
    steps: int
    x: np.ndarray

    # Certification
    session: Optional[CertSession]
    u_L: Optional[np.ndarray]
    result: Optional[CertResult]
    u_applied: Optional[np.ndarray]

    # Plant
    w: Optional[np.ndarray]
    x_next: Optional[np.ndarray]

    # Trace
    records: Annotated[list[StepRecord], operator.add]
    fallbacks: int


def create_initial_state(
    context: LoopContext,
    x0: np.ndarray,
    steps: int,
    session: Optional[CertSession] = None,
) -> LoopState:
    """
    Create the state for a new run.

    Args:
        context: Run ingredients
        x0: Initial global state
        steps: Number of steps T
        session: Certifier session started at x0 (certified and rdmpc runs)

    Returns:
        Initialized LoopState
    """
    return LoopState(
        context=context,
        t=0,
        steps=steps,
        x=np.asarray(x0, dtype=float).copy(),
        session=session,
        u_L=None,
        result=None,
        u_applied=None,
        w=None,
        x_next=None,
        records=[],
        fallbacks=0,
    )
