"""Solver retry and fallback utilities."""

import time
from dataclasses import dataclass, field
from typing import Any, Optional

import cvxpy as cp
import structlog
from tenacity import (
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_none,
)

from src.core.config import settings

logger = structlog.get_logger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

_ACCEPTED = {cp.OPTIMAL, cp.OPTIMAL_INACCURATE}
_INFEASIBLE = {cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE}


@dataclass
class RetryConfig:
    """Configuration for solver retry behavior."""

    solvers: tuple[str, ...] = field(
        default_factory=lambda: (settings.conic_solver, settings.fallback_solver)
    )
    tolerance: float = field(default_factory=lambda: settings.solver_tolerance)
    max_iter: int = field(default_factory=lambda: settings.solver_max_iter)


@dataclass
class SolveOutcome:
    """Normalized result of a cvxpy solve."""

    status: str  # "optimal" or "infeasible"
    solver: str
    raw_status: str
    value: Optional[float]
    solve_ms: float

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def solver_options(solver: str, tolerance: float, max_iter: int) -> dict[str, Any]:
    """
    Translate a common tolerance / iteration cap into solver-specific options.

    Args:
        solver: cvxpy solver name
        tolerance: Primal/dual residual tolerance
        max_iter: Iteration cap for interior-point solvers

    Returns:
        Keyword arguments for ``Problem.solve``
    """
    solver = solver.upper()
    if solver == "CLARABEL":
        return {
            "tol_gap_abs": tolerance,
            "tol_gap_rel": tolerance,
            "tol_feas": tolerance,
            "max_iter": max_iter,
        }
    if solver == "SCS":
        # first-order method; 1e-8 is out of reach in reasonable time
        eps = max(tolerance, 1e-6)
        return {"eps_abs": eps, "eps_rel": eps, "max_iters": 50 * max_iter}
    if solver == "OSQP":
        return {"eps_abs": tolerance, "eps_rel": tolerance, "max_iter": 50 * max_iter}
    if solver == "ECOS":
        return {"abstol": tolerance, "reltol": tolerance, "feastol": tolerance, "max_iters": max_iter}
    return {}


def solve_with_fallback(
    problem: cp.Problem,
    config: Optional[RetryConfig] = None,
    **kwargs: Any,
) -> SolveOutcome:
    """
    Solve a cvxpy problem, moving to the next configured solver on failure.

    A solver "fails" when it raises ``cp.error.SolverError`` or returns a
    status that is neither (inaccurately) optimal nor (inaccurately)
    infeasible. After the last solver the original error is re-raised.

    Args:
        problem: The problem to solve
        config: Retry configuration (uses settings if not provided)
        **kwargs: Extra keyword arguments passed to ``Problem.solve``

    Returns:
        SolveOutcome with the normalized status

    Raises:
        cp.error.SolverError: If every configured solver fails
    """
    config = config or RetryConfig()
    solvers = tuple(dict.fromkeys(s.upper() for s in config.solvers))

    for attempt in Retrying(
        stop=stop_after_attempt(len(solvers)),
        wait=wait_none(),
        retry=retry_if_exception_type(cp.error.SolverError),
        reraise=True,
    ):
        with attempt:
            solver = solvers[attempt.retry_state.attempt_number - 1]
            if attempt.retry_state.attempt_number > 1:
                logger.warning("Retrying solve with fallback solver", solver=solver)
            started = time.perf_counter()
            problem.solve(
                solver=solver,
                **solver_options(solver, config.tolerance, config.max_iter),
                **kwargs,
            )
            solve_ms = (time.perf_counter() - started) * 1e3
            raw_status = str(problem.status)

            if raw_status in _ACCEPTED:
                if raw_status == cp.OPTIMAL_INACCURATE:
                    logger.warning("Solver returned inaccurate optimum", solver=solver)
                return SolveOutcome(OPTIMAL, solver, raw_status, problem.value, solve_ms)
            if raw_status in _INFEASIBLE:
                return SolveOutcome(INFEASIBLE, solver, raw_status, None, solve_ms)
            raise cp.error.SolverError(f"{solver} returned status '{raw_status}'")

    # This should never be reached due to reraise=True
    raise RuntimeError("Unexpected state in retry logic")
