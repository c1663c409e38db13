"""
Online DMPSC conic program.

Constraints are generated per agent by ``agent_constraints`` from accessors for
the neighbor trajectories and budget increments. The centralized program hands
it the global variables; the consensus agents hand it their local copies. Both
views therefore contain exactly the same constraint records.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import cvxpy as cp
import numpy as np
import structlog

from src.certifier.negotiation import NegotiationRows, negotiation_rows
from src.core.retry import RetryConfig, SolveOutcome, solve_with_fallback
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)


class MissingArtifactsError(ValueError):
    """Raised when synthesis artifacts are absent or do not fit the model."""
    pass


class HorizonMismatchError(ValueError):
    """Raised when a horizon is invalid or differs from the session's."""
    pass


class ObjectiveKind(str, Enum):
    """Objective of the online program."""

    CERTIFY = "certify"  # min sum_i ||u_L,i - u~_i||^2
    PERFORMANCE = "performance"  # robust tube MPC stage and terminal cost


@dataclass(frozen=True, eq=False)
class ConstraintRecord:
    """One constraint of the program, tagged with the agent that owns it."""

    owner: int
    tag: str
    step: int
    constraint: cp.Constraint

    @property
    def key(self) -> tuple[int, str, int]:
        return (self.owner, self.tag, self.step)


@dataclass(frozen=True, eq=False)
class AgentBlock:
    """Decision variables owned by agent i."""

    index: int
    z: cp.Variable  # (N+1, n_i)
    v: cp.Variable  # (N, m_i)
    u_tilde: cp.Variable  # (m_i,)
    beta_tilde: cp.Variable  # scalar
    delta_beta: cp.Variable  # scalar

    @classmethod
    def create(cls, model: NetworkModel, i: int, horizon: int) -> "AgentBlock":
        sub = model.subsystems[i]
        return cls(
            index=i,
            z=cp.Variable((horizon + 1, sub.n), name=f"z_{i}"),
            v=cp.Variable((horizon, sub.m), name=f"v_{i}"),
            u_tilde=cp.Variable(sub.m, name=f"u_tilde_{i}"),
            beta_tilde=cp.Variable(name=f"beta_tilde_{i}"),
            delta_beta=cp.Variable(name=f"delta_beta_{i}"),
        )


@dataclass(frozen=True, eq=False)
class AgentParameters:
    """Request and session data as seen by agent i (affine in cvxpy parameters)."""

    x_neighborhood: cp.Expression
    u_L: cp.Expression
    beta: cp.Expression
    alpha: cp.Expression


TrajectoryOf = Callable[[int], cp.Expression]
IncrementOf = Callable[[int], cp.Expression]


def psd_factor(P: np.ndarray) -> np.ndarray:
    """L with L'L = P for symmetric PSD P; rows for zero eigenvalues are dropped."""
    P = 0.5 * (np.atleast_2d(P) + np.atleast_2d(P).T)
    w, V = np.linalg.eigh(P)
    keep = w > 1e-14 * max(1.0, float(np.max(np.abs(w))))
    return np.sqrt(w[keep])[:, None] * V[:, keep].T


def _stack(model: NetworkModel, i: int, z_of: TrajectoryOf, k: int) -> cp.Expression:
    return cp.hstack([z_of(j)[k] for j in model.subsystems[i].neighbors])


def agent_constraints(
    model: NetworkModel,
    artifacts,
    rows: NegotiationRows,
    horizon: int,
    block: AgentBlock,
    params: AgentParameters,
    z_of: TrajectoryOf,
    db_of: IncrementOf,
    pin_input: bool = False,
) -> list[ConstraintRecord]:
    """
    All constraints owned by agent i.

    ``z_of(j)`` returns the trajectory of neighbor j (rows 0..N-1 are used for
    j != i), ``db_of(j)`` the budget increment of neighbor j.
    """
    i = block.index
    sub = model.subsystems[i]
    tube, tightened, terminal = artifacts.tube, artifacts.tightened, artifacts.terminal
    A_N = model.A_neighborhood(i)
    L_tube = psd_factor(tube.P_neighborhood[i])
    L_term = psd_factor(terminal.P_blocks[i])
    z0 = _stack(model, i, z_of, 0)

    records = [
        ConstraintRecord(
            i, "tube_init", 0,
            cp.sum_squares(L_tube @ (params.x_neighborhood - z0)) <= block.beta_tilde,
        ),
        ConstraintRecord(i, "budget", 0, block.beta_tilde == params.beta + block.delta_beta),
        ConstraintRecord(i, "budget_sign", 0, block.beta_tilde >= 0),
    ]

    row = rows.row_of(i)
    if row is not None:
        records.append(
            ConstraintRecord(
                i, "negotiation", 0,
                sum(float(row[j]) * db_of(j) for j in sub.others) == 0,
            )
        )
    if i in rows.pinned:
        records.append(ConstraintRecord(i, "pin_increment", 0, block.delta_beta == 0))

    X_bar, U_bar = tightened.X_bar[i], tightened.U_bar[i]
    for k in range(horizon):
        z_N = z0 if k == 0 else _stack(model, i, z_of, k)
        records.append(
            ConstraintRecord(i, "dynamics", k, block.z[k + 1] == A_N @ z_N + sub.B @ block.v[k])
        )
        records.append(ConstraintRecord(i, "state", k, X_bar.H @ z_N <= X_bar.h))
        records.append(ConstraintRecord(i, "input", k, U_bar.H @ block.v[k] <= U_bar.h))

    records.append(
        ConstraintRecord(
            i, "terminal", horizon,
            cp.sum_squares(L_term @ block.z[horizon]) <= params.alpha,
        )
    )
    records.append(
        ConstraintRecord(
            i, "tube_law", 0,
            block.u_tilde == block.v[0] + tube.gains[i] @ (params.x_neighborhood - z0),
        )
    )
    if pin_input:
        records.append(ConstraintRecord(i, "pin_input", 0, block.u_tilde == params.u_L))
    return records


def agent_objective(
    model: NetworkModel,
    artifacts,
    horizon: int,
    kind: ObjectiveKind,
    block: AgentBlock,
    params: AgentParameters,
    z_of: TrajectoryOf,
    pin_input: bool = False,
) -> cp.Expression:
    i = block.index
    if pin_input:
        return cp.Constant(0.0)
    if kind is ObjectiveKind.CERTIFY:
        return cp.sum_squares(params.u_L - block.u_tilde)
    L_term = psd_factor(artifacts.terminal.P_blocks[i])
    cost = cp.sum_squares(L_term @ block.z[horizon])
    for k in range(horizon):
        cost = cost + 0.5 * cp.sum_squares(_stack(model, i, z_of, k)) + cp.sum_squares(block.v[k])
    return cost


def check_artifacts(model: NetworkModel, artifacts) -> None:
    """Raise MissingArtifactsError unless every artifact section fits the model."""
    if artifacts is None:
        raise MissingArtifactsError("synthesis artifacts are required")
    for name in ("tube", "tightened", "terminal"):
        if getattr(artifacts, name, None) is None:
            raise MissingArtifactsError(f"synthesis artifacts lack the {name} section")
    counts = {
        "tube": len(artifacts.tube.P_blocks),
        "tightened": len(artifacts.tightened.X_bar),
        "terminal": len(artifacts.terminal.P_blocks),
    }
    for name, count in counts.items():
        if count != model.M:
            raise MissingArtifactsError(f"{name} artifacts cover {count} subsystems, model has {model.M}")


@dataclass(frozen=True, eq=False)
class ProgramSolution:
    """Optimizer of the online program."""

    z: list[np.ndarray]  # per subsystem (N+1, n_i)
    v: list[np.ndarray]  # per subsystem (N, m_i)
    u_tilde: np.ndarray  # global (m,)
    beta_tilde: np.ndarray
    delta_beta: np.ndarray
    objective: float


class DmpscProgram:
    """
    Centralized view of the online program with cvxpy parameters for x, u_L,
    beta and alpha, so repeated solves reuse one compiled problem.
    """

    def __init__(
        self,
        model: NetworkModel,
        artifacts,
        horizon: int,
        objective: ObjectiveKind = ObjectiveKind.CERTIFY,
        pin_input: bool = False,
    ):
        check_artifacts(model, artifacts)
        if horizon < 1:
            raise HorizonMismatchError(f"horizon must be at least 1, got {horizon}")
        self.model = model
        self.artifacts = artifacts
        self.horizon = horizon
        self.objective_kind = ObjectiveKind(objective)
        self.pin_input = pin_input
        self.rows = negotiation_rows(model.neighborhoods)

        M = model.M
        self.x = cp.Parameter(model.n, name="x")
        self.u_L = cp.Parameter(model.m, name="u_L")
        self.beta = cp.Parameter(M, nonneg=True, name="beta")
        self.alpha = cp.Parameter(M, nonneg=True, name="alpha")
        self.blocks = [AgentBlock.create(model, i, horizon) for i in range(M)]

        self.records: list[ConstraintRecord] = []
        terms = []
        for i in range(M):
            params = self.agent_parameters(i)
            self.records.extend(
                agent_constraints(
                    model, artifacts, self.rows, horizon, self.blocks[i], params,
                    self._z_of, self._db_of, pin_input=pin_input,
                )
            )
            terms.append(
                agent_objective(
                    model, artifacts, horizon, self.objective_kind, self.blocks[i], params,
                    self._z_of, pin_input=pin_input,
                )
            )
        self.problem = cp.Problem(cp.Minimize(sum(terms)), [r.constraint for r in self.records])
        logger.debug(
            "Program built",
            horizon=horizon,
            objective=self.objective_kind.value,
            pin_input=pin_input,
            constraints=len(self.records),
        )

    def _z_of(self, j: int) -> cp.Expression:
        return self.blocks[j].z

    def _db_of(self, j: int) -> cp.Expression:
        return self.blocks[j].delta_beta

    def agent_parameters(self, i: int) -> AgentParameters:
        return AgentParameters(
            x_neighborhood=self.model.W_maps[i] @ self.x,
            u_L=self.u_L[self.model.input_slice(i)],
            beta=self.beta[i],
            alpha=self.alpha[i],
        )

    @property
    def keys(self) -> set[tuple[int, str, int]]:
        return {r.key for r in self.records}

    def bind(self, x: np.ndarray, u_L: np.ndarray, beta: np.ndarray, alpha: np.ndarray) -> None:
        """Load request and session values into the parameters."""
        x = np.asarray(x, dtype=float).reshape(-1)
        u_L = np.asarray(u_L, dtype=float).reshape(-1)
        if x.shape != (self.model.n,) or u_L.shape != (self.model.m,):
            raise ValueError(
                f"request shapes {x.shape}, {u_L.shape} do not match ({self.model.n},), ({self.model.m},)"
            )
        self.x.value = x
        self.u_L.value = u_L
        # budgets come out of the solver and may carry -1e-12 noise
        self.beta.value = np.maximum(np.asarray(beta, dtype=float), 0.0)
        self.alpha.value = np.maximum(np.asarray(alpha, dtype=float), 0.0)

    def solve(self, config: Optional[RetryConfig] = None) -> SolveOutcome:
        return solve_with_fallback(self.problem, config)

    def solution(self) -> ProgramSolution:
        """Values of the last successful solve."""
        return ProgramSolution(
            z=[np.asarray(b.z.value).reshape(self.horizon + 1, -1) for b in self.blocks],
            v=[np.asarray(b.v.value).reshape(self.horizon, -1) for b in self.blocks],
            u_tilde=np.concatenate([np.atleast_1d(b.u_tilde.value) for b in self.blocks]),
            beta_tilde=np.array([float(b.beta_tilde.value) for b in self.blocks]),
            delta_beta=np.array([float(b.delta_beta.value) for b in self.blocks]),
            objective=float(self.problem.value),
        )
