"""Per-run certifier state: budgets, terminal levels, shifted candidate and compiled programs."""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import structlog

from src.certifier.program import (
    DmpscProgram,
    HorizonMismatchError,
    MissingArtifactsError,
    ObjectiveKind,
    ProgramSolution,
    check_artifacts,
)
from src.core.config import settings
from src.core.retry import RetryConfig
from src.netmodel import NetworkModel
from src.terminal import update_alpha

logger = structlog.get_logger(__name__)


class SafeSetError(ValueError):
    """Raised when the initial state lies outside the implicit safe set X_N."""
    pass


class SessionIntegrityError(RuntimeError):
    """Raised when the budget bookkeeping breaks, which means a disturbance left W."""

    def __init__(self, message: str, beta: np.ndarray):
        super().__init__(message)
        self.beta = beta


@dataclass(frozen=True, eq=False)
class Candidate:
    """A nominal trajectory pair known to be feasible for the current budgets."""

    z: list[np.ndarray]  # per subsystem (N+1, n_i)
    v: list[np.ndarray]  # per subsystem (N, m_i)

    def tube_input(self, model: NetworkModel, artifacts, x: np.ndarray) -> np.ndarray:
        """u_i = v_i(0) + K_{Omega,i} (x_{N_i} - z_{N_i}(0))."""
        z0 = np.concatenate([z[0] for z in self.z])
        u = [
            self.v[i][0] + K @ model.neighborhood(np.asarray(x) - z0, i)
            for i, K in enumerate(artifacts.tube.gains)
        ]
        return np.concatenate(u)


class ProgramCache:
    """Compiled programs of one session, keyed by objective and input pinning."""

    def __init__(self, model: NetworkModel, artifacts, horizon: int):
        check_artifacts(model, artifacts)
        self.model = model
        self.artifacts = artifacts
        self.horizon = horizon
        self._programs: dict[tuple[ObjectiveKind, bool], DmpscProgram] = {}

    def get(self, objective: ObjectiveKind = ObjectiveKind.CERTIFY, pin_input: bool = False) -> DmpscProgram:
        key = (ObjectiveKind(objective), pin_input)
        if key not in self._programs:
            self._programs[key] = DmpscProgram(
                self.model, self.artifacts, self.horizon, objective=key[0], pin_input=pin_input
            )
        return self._programs[key]

    def serves(self, model: NetworkModel, artifacts) -> bool:
        return model is self.model and artifacts is self.artifacts


@dataclass(frozen=True, eq=False)
class CertSession:
    """
    Certifier state at time t.

    Sessions are immutable; ``advance_session`` returns the next one. The
    program cache is shared along a run and must not be used concurrently.
    """

    horizon: int
    beta: np.ndarray
    alpha: np.ndarray
    t: int = 0
    candidate: Optional[Candidate] = None
    history: tuple[str, ...] = ()
    solver: RetryConfig = field(default_factory=RetryConfig)
    programs: Optional[ProgramCache] = field(default=None, repr=False)

    def program(
        self,
        model: NetworkModel,
        artifacts,
        objective: ObjectiveKind = ObjectiveKind.CERTIFY,
        pin_input: bool = False,
    ) -> DmpscProgram:
        cache = self.programs
        if cache is None or not cache.serves(model, artifacts):
            cache = ProgramCache(model, artifacts, self.horizon)
        if cache.horizon != self.horizon:
            raise HorizonMismatchError(
                f"program horizon {cache.horizon} differs from session horizon {self.horizon}"
            )
        return cache.get(objective, pin_input)


def _solve_feasibility(program: DmpscProgram, x: np.ndarray, beta: np.ndarray, alpha: np.ndarray, solver: RetryConfig):
    program.bind(x, np.zeros(program.model.m), beta, alpha)
    return program.solve(solver)


def init_session(
    model: NetworkModel,
    artifacts,
    x0: np.ndarray,
    horizon: Optional[int] = None,
    solver: Optional[RetryConfig] = None,
) -> CertSession:
    """
    Start a session with beta_i(0) = 1/M and alpha_i(0) = alpha_bar/M.

    The feasibility solve that validates x(0) also provides the first
    candidate, so a fallback input exists from t = 0 on.

    Raises:
        SafeSetError: If x(0) admits no feasible program
        MissingArtifactsError: If artifacts are missing or do not fit the model
        HorizonMismatchError: If the horizon is smaller than 1
    """
    horizon = settings.horizon if horizon is None else horizon
    solver = solver or RetryConfig()
    cache = ProgramCache(model, artifacts, horizon)
    beta = np.full(model.M, 1.0 / model.M)
    alpha = np.asarray(artifacts.terminal.alpha0, dtype=float).copy()

    outcome = _solve_feasibility(cache.get(), x0, beta, alpha, solver)
    if not outcome.ok:
        raise SafeSetError(f"x(0) outside implicit safe set X_N (solver status {outcome.raw_status})")
    solution = cache.get().solution()
    logger.info("Session initialized", horizon=horizon, subsystems=model.M, solver=outcome.solver)
    return CertSession(
        horizon=horizon,
        beta=beta,
        alpha=alpha,
        candidate=Candidate(z=solution.z, v=solution.v),
        solver=solver,
        programs=cache,
    )


def is_feasible(
    model: NetworkModel,
    artifacts,
    x: np.ndarray,
    horizon: Optional[int] = None,
    solver: Optional[RetryConfig] = None,
) -> bool:
    """Membership of x in the implicit safe set X_N for the initial budgets."""
    horizon = settings.horizon if horizon is None else horizon
    program = DmpscProgram(model, artifacts, horizon)
    beta = np.full(model.M, 1.0 / model.M)
    outcome = _solve_feasibility(program, x, beta, artifacts.terminal.alpha0, solver or RetryConfig())
    return outcome.ok


def shift_candidate(model: NetworkModel, artifacts, solution: ProgramSolution | Candidate) -> Candidate:
    """Drop the first step and append the terminal law: z(N+1) = (A + B K_f) z(N), v(N) = K_f z(N)."""
    mats = model.global_matrices
    K_f = artifacts.terminal.K
    z_end = np.concatenate([z[-1] for z in solution.z])
    z_next = (mats.A + mats.B @ K_f) @ z_end
    v_next = K_f @ z_end
    z = [np.vstack([solution.z[i][1:], z_next[model.state_slice(i)]]) for i in range(model.M)]
    v = [np.vstack([solution.v[i][1:], v_next[model.input_slice(i)]]) for i in range(model.M)]
    return Candidate(z=z, v=v)


def advance_session(session: CertSession, x_next: np.ndarray, result) -> CertSession:
    """
    Move the session from t to t+1 after a feasible or fallback step.

    beta_i(t+1) = e_{N_i}' P_{N_i} e_{N_i} with e = x(t+1) - z*(1|t); alpha is
    updated from the predicted terminal state z*(N|t); the stored candidate is
    the shifted optimal trajectory.

    Raises:
        SessionIntegrityError: If sum_i beta_i(t+1) exceeds 1 beyond tolerance
        MissingArtifactsError: If the session carries no program cache
        ValueError: If the result is neither feasible nor a fallback
    """
    if result.status not in ("feasible", "fallback"):
        raise ValueError(f"cannot advance after status {result.status!r}")
    cache = session.programs
    if cache is None:
        raise MissingArtifactsError("session has no artifacts attached; use init_session")
    model, artifacts = cache.model, cache.artifacts
    if result.z[0].shape[0] != session.horizon + 1:
        raise HorizonMismatchError(
            f"result horizon {result.z[0].shape[0] - 1} differs from session horizon {session.horizon}"
        )

    x_next = np.asarray(x_next, dtype=float).reshape(-1)
    z1 = np.concatenate([z[1] for z in result.z])
    error = x_next - z1
    beta = np.array(
        [
            float(model.neighborhood(error, i) @ P_N @ model.neighborhood(error, i))
            for i, P_N in enumerate(artifacts.tube.P_neighborhood)
        ]
    )
    total = float(beta.sum())
    if total > 1.0 + settings.sdp_feasibility_tol:
        logger.warning("Budget sum exceeded", t=session.t + 1, beta_sum=total)
        raise SessionIntegrityError(
            f"sum of budgets {total:.9f} exceeds 1 at t={session.t + 1}; disturbance outside W?",
            beta,
        )

    z_end = np.concatenate([z[-1] for z in result.z])
    alpha = update_alpha(
        artifacts.terminal,
        session.alpha,
        [model.neighborhood(z_end, i) for i in range(model.M)],
    )
    candidate = shift_candidate(model, artifacts, result)
    logger.debug("Session advanced", t=session.t + 1, beta_sum=total, alpha_sum=float(alpha.sum()))
    return replace(
        session,
        beta=beta,
        alpha=alpha,
        t=session.t + 1,
        candidate=candidate,
        history=session.history + (result.status,),
    )
