"""Closed-loop simulation of raw, certified and robust tube MPC controllers."""

from functools import partial
from typing import Literal, Optional

import numpy as np
import structlog

from src.bench.costs import stage_costs
from src.bench.disturbance import sample_global_disturbance
from src.bench.trace import SimTrace
from src.certifier import ObjectiveKind, SafetyCertifier
from src.core.config import settings
from src.loop import Controller, LoopContext, run_closed_loop
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)


def demo_initial_state(
    model: NetworkModel,
    subsystem: int = 1,
    position: float = -0.15,
    velocity: float = 0.6,
) -> np.ndarray:
    """
    Chain state at rest except one mass moving toward its tight upper bound.

    On the benchmark chain the unfiltered linear policy overshoots
    p <= 0.1 from here while the state is still certifiable.
    """
    x = np.zeros(model.n)
    offset = int(model.state_offsets[subsystem])
    x[offset] = position
    if model.subsystems[subsystem].n > 1:
        x[offset + 1] = velocity
    return x


def simulate(
    model: NetworkModel,
    artifacts,
    policy,
    controller: Controller = "certified",
    T: Optional[int] = None,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
    horizon: Optional[int] = None,
    backend: Literal["centralized", "distributed"] = "centralized",
    consensus=None,
    boundary_disturbance: bool = False,
    policy_name: Optional[str] = None,
) -> SimTrace:
    """
    Run one closed loop of T steps.

    Args:
        model: Network model
        artifacts: Synthesis artifacts (unused by raw runs)
        policy: Callback u_L = policy(x, t)
        controller: "raw" applies u_L, "certified" the certified input,
            "rdmpc" the robust tube MPC input
        T: Number of steps (defaults to settings.sim_steps)
        seed: Disturbance seed
        x0: Initial state (defaults to ``demo_initial_state``)
        horizon: Prediction horizon N
        backend: Solver for the online program
        consensus: ConsensusParams for the distributed backend
        boundary_disturbance: Draw w on the surface of W

    Returns:
        Fully populated SimTrace

    Raises:
        SafeSetError: If a certified or rdmpc run starts outside X_N
    """
    T = settings.sim_steps if T is None else T
    x0 = demo_initial_state(model) if x0 is None else np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)

    certifier, session = None, None
    if controller != "raw":
        objective = ObjectiveKind.PERFORMANCE if controller == "rdmpc" else ObjectiveKind.CERTIFY
        certifier = SafetyCertifier(
            model, artifacts, horizon=horizon, objective=objective, backend=backend, consensus=consensus
        )
        session = certifier.start(x0)

    context = LoopContext(
        model=model,
        controller=controller,
        propose=policy,
        disturbance=partial(sample_global_disturbance, model, boundary=boundary_disturbance),
        stage_costs=partial(stage_costs, model),
        rng=rng,
        certifier=certifier,
    )
    records, x_final, fallbacks = run_closed_loop(context, x0, T, session)
    name = policy_name or getattr(policy, "name", "external")
    trace = SimTrace(
        model=model,
        records=records,
        x_final=x_final,
        controller=controller,
        policy=name,
        seed=seed,
        fallbacks=fallbacks,
        metadata={"horizon": horizon or settings.horizon, "backend": backend, "steps": T},
    )
    logger.info(
        "Run finished",
        controller=controller,
        policy=name,
        seed=seed,
        cost=trace.total_cost,
        state_violations=trace.state_violations(),
        fallbacks=fallbacks,
    )
    return trace
