"""Distributed versus centralized solution of identical requests."""

from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel

from src.certifier.certify import CertRequest
from src.certifier.program import DmpscProgram
from src.certifier.session import CertSession
from src.core.config import settings
from src.distsolve.consensus import ConsensusNotConverged, ConsensusParams, solve_distributed
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)


class ComparisonReport(BaseModel):
    """
    Gaps between the two solvers on one request.

    A distributed run that does not converge is reported as infeasible with
    ``converged`` false; gaps are only set when both solvers succeed.
    """

    centralized_status: str
    distributed_status: str
    converged: bool
    iterations: int
    messages: int
    input_gap: Optional[float] = None
    relative_input_gap: Optional[float] = None
    objective_gap: Optional[float] = None
    relative_objective_gap: Optional[float] = None
    centralized_ms: float
    distributed_ms: float


_EPS = 1e-12


def _relative(gap: float, scale: float) -> float:
    """Gap divided by the centralized magnitude; no floor at one."""
    return gap / (scale + _EPS)


def compare_with_centralized(
    model: NetworkModel,
    artifacts,
    request: CertRequest,
    params: Optional[ConsensusParams] = None,
    session: Optional[CertSession] = None,
    horizon: Optional[int] = None,
) -> ComparisonReport:
    """
    Solve one request centrally and by consensus and report the gaps.

    Budgets and levels come from ``session`` when given, otherwise from the
    initial values beta = 1/M and alpha = alpha_bar/M. Relative gaps are taken
    against max(1, |centralized value|).
    """
    if session is not None:
        horizon, beta, alpha, solver = session.horizon, session.beta, session.alpha, session.solver
    else:
        horizon = settings.horizon if horizon is None else horizon
        beta = np.full(model.M, 1.0 / model.M)
        alpha = artifacts.terminal.alpha0
        solver = None

    program = DmpscProgram(model, artifacts, horizon)
    program.bind(request.x, request.u_L, beta, alpha)
    central = program.solve(solver)
    central_solution = program.solution() if central.ok else None

    converged, iterations, messages = False, 0, 0
    distributed_ms = 0.0
    distributed = None
    try:
        outcome = solve_distributed(program, params, solver)
    except ConsensusNotConverged as exc:
        iterations = len(exc.primal_residuals)
        distributed_status = "infeasible"
    else:
        converged = outcome.telemetry.converged
        iterations = outcome.telemetry.iterations
        messages = int(sum(outcome.telemetry.messages))
        distributed_ms = outcome.solve_ms
        distributed = outcome.solution
        distributed_status = "feasible" if outcome.feasible else "infeasible"

    report = ComparisonReport(
        centralized_status="feasible" if central.ok else "infeasible",
        distributed_status=distributed_status,
        converged=converged,
        iterations=iterations,
        messages=messages,
        centralized_ms=central.solve_ms,
        distributed_ms=distributed_ms,
    )
    if central_solution is not None and distributed is not None:
        input_gap = float(np.linalg.norm(distributed.u_tilde - central_solution.u_tilde))
        objective_gap = abs(distributed.objective - central_solution.objective)
        report.input_gap = input_gap
        report.relative_input_gap = _relative(input_gap, float(np.linalg.norm(central_solution.u_tilde)))
        report.objective_gap = objective_gap
        report.relative_objective_gap = _relative(objective_gap, abs(central_solution.objective))
    logger.info(
        "Solver comparison",
        centralized=report.centralized_status,
        distributed=report.distributed_status,
        iterations=iterations,
        input_gap=report.input_gap,
    )
    return report
