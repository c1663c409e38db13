"""Surrogate learning-based policies proposing u_L."""

from typing import Any, Callable, Literal, Optional

import cvxpy as cp
import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.bench.costs import state_weight
from src.certifier.program import check_artifacts, psd_factor
from src.core.config import settings
from src.core.retry import RetryConfig, solve_with_fallback
from src.netmodel import NetworkModel
from src.tube.lmi import StructuredVariables, psd

logger = structlog.get_logger(__name__)

Matrix = list[list[float]]
LocalLaw = Callable[[int, np.ndarray, int], np.ndarray]

PolicyKind = Literal["linear-feedback", "nominal-dmpc", "zero", "external"]


class PolicySynthesisError(RuntimeError):
    """Raised when the structured policy gain LMI has no solution."""
    pass


class PolicySpec(BaseModel):
    """
    Policy selection.

    ``gains`` (linear-feedback) are neighborhood gains K_i acting on x_{N_i};
    when omitted they are synthesized. ``callback(i, x_{N_i}, t)`` drives an
    external policy.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: PolicyKind
    horizon: Optional[int] = Field(default=None, ge=1)
    gains: Optional[list[Matrix]] = None
    callback: Optional[Callable[..., Any]] = Field(default=None, exclude=True)

    @model_validator(mode="after")
    def check_kind(self) -> "PolicySpec":
        if self.kind == "external" and self.callback is None:
            raise ValueError("external policy requires a callback")
        return self


class NeighborhoodPolicy:
    """u_i = law(i, x_{N_i}, t): each subsystem sees only its neighborhood state."""

    def __init__(self, model: NetworkModel, law: LocalLaw, name: str):
        self.model = model
        self.law = law
        self.name = name

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.concatenate(
            [
                np.atleast_1d(np.asarray(self.law(i, self.model.neighborhood(x, i), t), dtype=float))
                for i in range(self.model.M)
            ]
        )


class LinearFeedbackPolicy(NeighborhoodPolicy):
    def __init__(self, model: NetworkModel, gains: list[np.ndarray]):
        self.gains = [np.atleast_2d(np.asarray(K, dtype=float)) for K in gains]
        super().__init__(model, lambda i, x_N, t: self.gains[i] @ x_N, "linear-feedback")


def synthesize_policy_gains(
    model: NetworkModel,
    state_weight_factor: Optional[float] = None,
    input_weight: Optional[float] = None,
) -> list[np.ndarray]:
    """
    Structured stabilizing gains for the undisturbed model from the
    guaranteed-cost LMI

        [[E, (AE + BY)', (L E)', (R^1/2 Y)'], [AE + BY, E, 0, 0],
         [L E, 0, gamma I, 0], [R^1/2 Y, 0, 0, gamma I]] >= 0,

    with L'L = Q = w_x sum_i W_i' W_i and R = w_u I, minimizing gamma.
    E is block-diagonal with E >= I, Y is neighborhood-structured.

    Raises:
        PolicySynthesisError: If the LMI is infeasible
    """
    w_x = settings.policy_state_weight if state_weight_factor is None else state_weight_factor
    w_u = settings.policy_input_weight if input_weight is None else input_weight
    mats = model.global_matrices
    variables = StructuredVariables(model, min_shape=1.0)
    gamma = cp.Variable(name="gamma")

    E = variables.E_global()
    KE = variables.KE_global()
    L = psd_factor(w_x * state_weight(model))
    r = np.sqrt(w_u)
    n, m, q = model.n, model.m, L.shape[0]
    closed_loop = mats.A @ E + mats.B @ KE
    lmi = cp.bmat(
        [
            [E, closed_loop.T, (L @ E).T, r * KE.T],
            [closed_loop, E, np.zeros((n, q)), np.zeros((n, m))],
            [L @ E, np.zeros((q, n)), gamma * np.eye(q), np.zeros((q, m))],
            [r * KE, np.zeros((m, n)), np.zeros((m, q)), gamma * np.eye(m)],
        ]
    )
    problem = cp.Problem(cp.Minimize(gamma), variables.constraints() + [psd(lmi, settings.psd_margin)])
    try:
        outcome = solve_with_fallback(problem, RetryConfig())
    except cp.error.SolverError as exc:
        raise PolicySynthesisError(f"policy gain synthesis failed: {exc}") from exc
    if not outcome.ok:
        raise PolicySynthesisError(f"policy gain synthesis infeasible ({outcome.raw_status})")
    _, gains = variables.values()
    logger.info("Policy gains synthesized", gamma=float(gamma.value))
    return gains


def finite_horizon_lq_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, horizon: int) -> np.ndarray:
    """
    First-step gain of the unconstrained N-step LQ problem with zero terminal
    weight: u(0) = K x(0) minimizes sum_k x'Q x + u'u.
    """
    R = np.eye(B.shape[1])
    P = np.zeros_like(A)
    for _ in range(horizon - 1):
        S = R + B.T @ P @ B
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
        P = 0.5 * (P + P.T)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def neighborhood_dynamics(model: NetworkModel, i: int) -> tuple[np.ndarray, np.ndarray]:
    """
    (A_loc, B_loc) of subsystem i's neighborhood with couplings to states
    outside N_i dropped. Inputs are ordered like the neighborhood states.
    """
    neighbors = model.subsystems[i].neighbors
    n_N = model.neighborhood_dim(i)
    input_sizes = [model.subsystems[j].m for j in neighbors]
    input_starts = np.concatenate([[0], np.cumsum(input_sizes)]).astype(int)
    A_loc = np.zeros((n_N, n_N))
    B_loc = np.zeros((n_N, int(input_starts[-1])))
    for k, j in enumerate(neighbors):
        rows = model.neighborhood_slice(i, j)
        sub = model.subsystems[j]
        for l, A_jl in sub.A.items():
            if l in neighbors:
                A_loc[rows, model.neighborhood_slice(i, l)] = A_jl
        B_loc[rows, input_starts[k] : input_starts[k + 1]] = sub.B
    return A_loc, B_loc


class _LocalMpc:
    """
    Agent i's N-step program over z_{N_i} and the inputs of all j in N_i,
    with stage cost 1/2 |z_{N_i}|^2 + sum_j |v_j|^2, X_i on z_{N_i} and U_j
    on v_j. Only v_i(0) is applied.
    """

    def __init__(self, model: NetworkModel, i: int, horizon: int):
        neighbors = model.subsystems[i].neighbors
        A_loc, B_loc = neighborhood_dynamics(model, i)
        n_N, m_N = B_loc.shape
        own = neighbors.index(i)
        input_starts = np.concatenate([[0], np.cumsum([model.subsystems[j].m for j in neighbors])]).astype(int)
        self.own_inputs = slice(int(input_starts[own]), int(input_starts[own + 1]))

        self.x0 = cp.Parameter(n_N, name=f"x0_{i}")
        self.z = cp.Variable((horizon + 1, n_N), name=f"z_{i}")
        self.v = cp.Variable((horizon, m_N), name=f"v_{i}")
        X_i = model.subsystems[i].X
        constraints = [self.z[0] == self.x0]
        cost = 0
        for k in range(horizon):
            constraints += [
                self.z[k + 1] == A_loc @ self.z[k] + B_loc @ self.v[k],
                X_i.H @ self.z[k + 1] <= X_i.h,
            ]
            for pos, j in enumerate(neighbors):
                U_j = model.subsystems[j].U
                constraints.append(U_j.H @ self.v[k, input_starts[pos] : input_starts[pos + 1]] <= U_j.h)
            cost = cost + 0.5 * cp.sum_squares(self.z[k]) + cp.sum_squares(self.v[k])
        self.problem = cp.Problem(cp.Minimize(cost), constraints)
        self.lq_gain = finite_horizon_lq_gain(A_loc, B_loc, 0.5 * np.eye(n_N), horizon)[self.own_inputs]

    def solve(self, x_N: np.ndarray) -> Optional[np.ndarray]:
        self.x0.value = x_N
        try:
            outcome = solve_with_fallback(self.problem)
        except cp.error.SolverError:
            return None
        if not outcome.ok:
            return None
        return np.asarray(self.v.value[0, self.own_inputs], dtype=float)


class NominalMpcPolicy(NeighborhoodPolicy):
    """
    Distributed nominal MPC on the undisturbed model without terminal
    ingredients. Each subsystem solves its own neighborhood program from
    x_{N_i} and applies its first input; an infeasible agent applies its
    unconstrained LQ input instead.
    """

    def __init__(self, model: NetworkModel, horizon: int):
        self.horizon = horizon
        self.agents = [_LocalMpc(model, i, horizon) for i in range(model.M)]
        self.lq_gain = model.lift_gains([agent.lq_gain for agent in self.agents])
        self.infeasible_steps = 0
        self._fell_back = False
        super().__init__(model, self._local_input, "nominal-dmpc")

    def _local_input(self, i: int, x_N: np.ndarray, t: int) -> np.ndarray:
        u_i = self.agents[i].solve(x_N)
        if u_i is None:
            self._fell_back = True
            logger.debug("Nominal MPC infeasible, using LQ input", agent=i, t=t)
            return self.agents[i].lq_gain @ x_N
        return u_i

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        self._fell_back = False
        u = super().__call__(x, t)
        if self._fell_back:
            self.infeasible_steps += 1
        return u


Policy = Callable[[np.ndarray, int], np.ndarray]


def make_policy(spec: PolicySpec, model: NetworkModel, artifacts=None) -> Policy:
    """
    Build a policy callback u_L = policy(x, t).

    Raises:
        MissingArtifactsError: If ``artifacts`` are given but were synthesized
            for another network
        ValueError: If the number of linear-feedback gains differs from M
    """
    if artifacts is not None:
        check_artifacts(model, artifacts)
    if spec.kind == "zero":
        return NeighborhoodPolicy(model, lambda i, x_N, t: np.zeros(model.subsystems[i].m), "zero")
    if spec.kind == "linear-feedback":
        gains = (
            [np.array(K) for K in spec.gains] if spec.gains is not None else synthesize_policy_gains(model)
        )
        if len(gains) != model.M:
            raise ValueError(f"expected {model.M} gains, got {len(gains)}")
        return LinearFeedbackPolicy(model, gains)
    if spec.kind == "nominal-dmpc":
        return NominalMpcPolicy(model, spec.horizon or settings.horizon)
    return NeighborhoodPolicy(model, spec.callback, "external")
