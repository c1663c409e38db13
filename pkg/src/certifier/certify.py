"""Certified input computation, infeasibility fallback and the SafetyCertifier facade."""

from dataclasses import dataclass, field
from typing import Any, Literal, Optional

import numpy as np
import structlog

from src.certifier.program import HorizonMismatchError, ObjectiveKind, ProgramSolution
from src.certifier.session import (
    CertSession,
    ProgramCache,
    advance_session,
    init_session,
)
from src.core.config import settings
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)

Backend = Literal["centralized", "distributed"]


class CertificationInfeasible(RuntimeError):
    """Raised when the program is infeasible and no candidate input is stored."""
    pass


@dataclass(frozen=True)
class CertRequest:
    """Measured global state and the proposed global input."""

    x: np.ndarray
    u_L: np.ndarray


@dataclass(frozen=True, eq=False)
class CertResult:
    """
    Certified input and optimizer. ``status`` is "feasible" after a successful
    solve and "fallback" when the stored candidate input was applied instead.
    """

    u_cert: np.ndarray
    u_L: np.ndarray
    z: list[np.ndarray]
    v: list[np.ndarray]
    beta_tilde: np.ndarray
    delta_beta: np.ndarray
    objective: float
    status: str
    solve_ms: float
    backend: str = "centralized"
    solver: str = ""
    telemetry: dict[str, Any] = field(default_factory=dict)

    @property
    def modified(self) -> bool:
        """True when |u_cert - u_L|_inf exceeds ``settings.passthrough_input_tol``."""
        return float(np.max(np.abs(self.u_cert - self.u_L), initial=0.0)) > settings.passthrough_input_tol


def build_program(
    model: NetworkModel,
    artifacts,
    session: CertSession,
    request: CertRequest,
    objective: ObjectiveKind = ObjectiveKind.CERTIFY,
    pin_input: bool = False,
):
    """
    Compiled program for the session with the request and budgets bound.

    Raises:
        MissingArtifactsError: If artifacts are missing or do not fit the model
        HorizonMismatchError: If the session horizon is invalid
    """
    program = session.program(model, artifacts, objective=objective, pin_input=pin_input)
    program.bind(request.x, request.u_L, session.beta, session.alpha)
    return program


def _result(
    request: CertRequest,
    solution: ProgramSolution,
    solve_ms: float,
    backend: str,
    solver: str,
    telemetry: Optional[dict[str, Any]] = None,
) -> CertResult:
    return CertResult(
        u_cert=solution.u_tilde,
        u_L=np.asarray(request.u_L, dtype=float).reshape(-1),
        z=solution.z,
        v=solution.v,
        beta_tilde=solution.beta_tilde,
        delta_beta=solution.delta_beta,
        objective=solution.objective,
        status="feasible",
        solve_ms=solve_ms,
        backend=backend,
        solver=solver,
        telemetry=telemetry or {},
    )


def fallback_result(
    model: NetworkModel,
    artifacts,
    session: CertSession,
    request: CertRequest,
    solve_ms: float = 0.0,
) -> CertResult:
    """
    Apply the stored candidate: u_i = v_{c,i}(0) + K_{Omega,i} (x_{N_i} - z_{c,N_i}(0)).

    Raises:
        CertificationInfeasible: If the session holds no candidate
    """
    if session.candidate is None:
        raise CertificationInfeasible(f"program infeasible at t={session.t} and no candidate stored")
    candidate = session.candidate
    u = candidate.tube_input(model, artifacts, request.x)
    u_L = np.asarray(request.u_L, dtype=float).reshape(-1)
    logger.warning("Certification infeasible, applying candidate input", t=session.t)
    return CertResult(
        u_cert=u,
        u_L=u_L,
        z=candidate.z,
        v=candidate.v,
        beta_tilde=np.asarray(session.beta, dtype=float).copy(),
        delta_beta=np.zeros(model.M),
        objective=float(np.sum((u_L - u) ** 2)),
        status="fallback",
        solve_ms=solve_ms,
    )


def certify(
    model: NetworkModel,
    artifacts,
    session: CertSession,
    request: CertRequest,
    objective: ObjectiveKind = ObjectiveKind.CERTIFY,
    backend: Backend = "centralized",
    consensus=None,
) -> CertResult:
    """
    Closest safe input to the proposal for the current session.

    With ``backend="distributed"`` the program is solved by consensus ADMM;
    if consensus does not converge the centralized solve is used instead.
    An infeasible program leads to the candidate fallback. The session is
    not advanced here.

    Raises:
        CertificationInfeasible: If the program is infeasible and no candidate exists
    """
    program = build_program(model, artifacts, session, request, objective=objective)

    if backend == "distributed":
        from src.distsolve.consensus import ConsensusNotConverged, solve_distributed

        try:
            outcome = solve_distributed(program, consensus)
        except ConsensusNotConverged as exc:
            logger.warning(
                "Consensus did not converge, using centralized solve",
                t=session.t,
                iterations=len(exc.primal_residuals),
            )
        else:
            if outcome.feasible:
                return _result(
                    request, outcome.solution, outcome.solve_ms, "distributed", "admm", outcome.telemetry_summary()
                )
            return fallback_result(model, artifacts, session, request, outcome.solve_ms)

    solve = program.solve(session.solver)
    if solve.ok:
        return _result(request, program.solution(), solve.solve_ms, "centralized", solve.solver)
    return fallback_result(model, artifacts, session, request, solve.solve_ms)


def passthrough_feasible(
    model: NetworkModel,
    artifacts,
    session: CertSession,
    request: CertRequest,
) -> bool:
    """Pin u~ = u_L and check feasibility; an independent oracle for the pass-through property."""
    program = build_program(model, artifacts, session, request, pin_input=True)
    return program.solve(session.solver).ok


class SafetyCertifier:
    """
    One model and artifact bundle, one horizon, one backend.

    Keeps the compiled programs across calls so each step only rebinds
    parameters.
    """

    def __init__(
        self,
        model: NetworkModel,
        artifacts,
        horizon: Optional[int] = None,
        objective: ObjectiveKind = ObjectiveKind.CERTIFY,
        backend: Backend = "centralized",
        consensus=None,
    ):
        self.model = model
        self.artifacts = artifacts
        self.horizon = settings.horizon if horizon is None else horizon
        self.objective = ObjectiveKind(objective)
        self.backend = backend
        self.consensus = consensus
        self._membership = ProgramCache(model, artifacts, self.horizon)

    def start(self, x0: np.ndarray) -> CertSession:
        return init_session(self.model, self.artifacts, x0, self.horizon)

    def certify(self, session: CertSession, x: np.ndarray, u_L: np.ndarray) -> CertResult:
        if session.horizon != self.horizon:
            raise HorizonMismatchError(
                f"session horizon {session.horizon} differs from certifier horizon {self.horizon}"
            )
        return certify(
            self.model,
            self.artifacts,
            session,
            CertRequest(x=np.asarray(x, dtype=float), u_L=np.asarray(u_L, dtype=float)),
            objective=self.objective,
            backend=self.backend,
            consensus=self.consensus,
        )

    def advance(self, session: CertSession, x_next: np.ndarray, result: CertResult) -> CertSession:
        return advance_session(session, x_next, result)

    def is_feasible(self, x: np.ndarray) -> bool:
        """x in X_N for beta = 1/M and alpha = alpha_bar/M."""
        program = self._membership.get()
        program.bind(
            x,
            np.zeros(self.model.m),
            np.full(self.model.M, 1.0 / self.model.M),
            self.artifacts.terminal.alpha0,
        )
        return program.solve().ok
