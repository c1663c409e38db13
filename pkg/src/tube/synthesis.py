"""Structured ellipsoidal RPI tube synthesis by semidefinite programming."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import cvxpy as cp
import numpy as np
import structlog
from scipy.linalg import eigh

from src.core.config import settings
from src.core.retry import RetryConfig, solve_with_fallback
from src.netmodel import NetworkModel
from src.tube.lmi import (
    StructuredVariables,
    neighborhood_block_diag,
    psd,
    row_support_lmi,
)

logger = structlog.get_logger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Shapes are inflated by this relative amount after extraction so the
# invariance implication holds with a margin above solver accuracy.
RPI_INFLATION = 1e-6


class TubeSynthesisError(RuntimeError):
    """Raised when no contraction factor yields a feasible tube SDP."""

    def __init__(self, message: str, attempts: list[dict[str, Any]]):
        self.attempts = attempts
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class StructuredTube:
    """
    Structured ellipsoidal tube Omega = {e : sum_i e_i' P_i e_i <= 1} with gains K_{Omega,i}.

    ``P_neighborhood[i]`` is the neighborhood form P_{N_i} (only block i nonzero),
    ``gains[i]`` maps x_{N_i} to u_i. ``P`` and ``K`` are the assembled global
    matrices used for verification and tightening.
    """

    P_blocks: list[np.ndarray]
    gains: list[np.ndarray]
    P_neighborhood: list[np.ndarray]
    P: np.ndarray
    K: np.ndarray
    tau: float = float("nan")
    tau_local: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")

    @classmethod
    def from_blocks(
        cls,
        model: NetworkModel,
        P_blocks: list[np.ndarray],
        gains: list[np.ndarray],
        tau: float = float("nan"),
        tau_local: Optional[np.ndarray] = None,
        objective: float = float("nan"),
    ) -> "StructuredTube":
        P_blocks = [0.5 * (np.atleast_2d(P) + np.atleast_2d(P).T) for P in P_blocks]
        gains = [np.atleast_2d(np.asarray(K, dtype=float)) for K in gains]
        return cls(
            P_blocks=P_blocks,
            gains=gains,
            P_neighborhood=_project(model, P_blocks),
            P=model.block_diag(P_blocks),
            K=model.lift_gains(gains),
            tau=float(tau),
            tau_local=np.zeros(model.M) if tau_local is None else np.asarray(tau_local, dtype=float),
            objective=float(objective),
        )

    @property
    def E_blocks(self) -> list[np.ndarray]:
        return [np.linalg.inv(P) for P in self.P_blocks]

    def scaled(self, model: NetworkModel, factor: float) -> "StructuredTube":
        """Same gains, shape matrices multiplied by ``factor`` (factor > 1 shrinks the set)."""
        return StructuredTube.from_blocks(
            model,
            [factor * P for P in self.P_blocks],
            self.gains,
            tau=self.tau,
            tau_local=self.tau_local,
            objective=self.objective,
        )


def _project(model: NetworkModel, P_blocks: list[np.ndarray]) -> list[np.ndarray]:
    return [
        model.W_maps[i] @ model.T_maps[i].T @ P_blocks[i] @ model.T_maps[i] @ model.W_maps[i].T
        for i in range(model.M)
    ]


def project_to_neighborhood_form(tube: StructuredTube, model: NetworkModel) -> list[np.ndarray]:
    """
    Neighborhood blocks P_{N_i} = W_i T_i' P_i T_i W_i'.

    Their quadratic forms on e_{N_i} sum to e' P e for every global e.
    """
    return _project(model, tube.P_blocks)


@dataclass
class _Attempt:
    tau: float
    status: str
    objective: float = math.inf
    E: Optional[list[np.ndarray]] = None
    gains: Optional[list[np.ndarray]] = None
    tau_local: Optional[np.ndarray] = None

    @property
    def feasible(self) -> bool:
        return self.E is not None

    def summary(self) -> dict[str, Any]:
        return {"tau": self.tau, "status": self.status, "objective": self.objective}


def _disturbance_free(sub) -> bool:
    return sub.W.q == 0.0 and np.min(np.linalg.eigvalsh(sub.W.Q)) > 0.0


def _free_multiplier(
    tau: float,
    E_i: np.ndarray,
    C_own: np.ndarray,
    G: np.ndarray,
    Q: np.ndarray,
) -> float:
    """
    Smallest tau_i making the three-block invariance LMI hold when W_i = {0}.

    The two-block LMI R = [[tau E_i, C'], [C, E_i]] is solved instead; any
    tau_i with tau_i Q >= [0; G]' R^-1 [0; G] completes it and leaves the
    budget unchanged because q_i = 0.
    """
    n = E_i.shape[0]
    R = np.block([[tau * E_i, C_own.T], [C_own, E_i]])
    R = 0.5 * (R + R.T)
    G_lift = np.vstack([np.zeros((n, G.shape[1])), G])
    need = G_lift.T @ np.linalg.solve(R, G_lift)
    top = float(np.max(eigh(0.5 * (need + need.T), Q, eigvals_only=True)))
    return (1.0 + 1e-3) * max(top, 0.0) + settings.psd_margin


def _solve_at_tau(model: NetworkModel, tau: float, fraction: float) -> _Attempt:
    """One SDP solve with the contraction multiplier tau_{M+1} fixed."""
    margin = settings.psd_margin
    variables = StructuredVariables(model, min_shape=settings.tube_min_shape)
    tau_local = cp.Variable(model.M, nonneg=True, name="tau")
    constraints = variables.constraints()
    support_sq = []

    for i, sub in enumerate(model.subsystems):
        E_i = variables.E[i]
        E_N = variables.E_neighborhood(i)
        K_i = variables.Y[i]
        C = model.A_neighborhood(i) @ E_N + sub.B @ K_i
        own = model.neighborhood_slice(i, i)

        # tau*E_bar_i vanishes outside block i, so PSD-ness pins the coupling
        # columns of C to zero; the remaining blocks form the reduced LMI.
        for j in sub.others:
            constraints.append(C[:, model.neighborhood_slice(i, j)] == 0)
        C_own = C[:, own]

        if _disturbance_free(sub):
            lmi = cp.bmat([[tau * E_i, C_own.T], [C_own, E_i]])
            # W_i = {0} has a point tube; the floor keeps P_i finite
            constraints.append(psd(E_i, settings.disturbance_free_shape))
        else:
            lmi = cp.bmat(
                [
                    [tau * E_i, np.zeros((sub.n, sub.p)), C_own.T],
                    [np.zeros((sub.p, sub.n)), tau_local[i] * sub.W.Q, sub.G.T],
                    [C_own, sub.G, E_i],
                ]
            )
        constraints.append(psd(lmi, margin))
        constraints.append((tau - 1.0) / model.M + tau_local[i] * sub.W.q <= -margin)

        s_x = cp.Variable(sub.X.n_rows, nonneg=True, name=f"hsq_{i}")
        for j in range(sub.X.n_rows):
            row = sub.X.H[j : j + 1, :]
            constraints.append(row_support_lmi(s_x[j], row @ E_N, E_N))
            constraints.append(s_x[j] <= (fraction * sub.X.h[j]) ** 2)
        s_u = cp.Variable(sub.U.n_rows, nonneg=True, name=f"osq_{i}")
        for j in range(sub.U.n_rows):
            row = sub.U.H[j : j + 1, :]
            constraints.append(row_support_lmi(s_u[j], row @ K_i, E_N))
            constraints.append(s_u[j] <= (fraction * sub.U.h[j]) ** 2)
        support_sq += [s_x, s_u]

    problem = cp.Problem(cp.Minimize(sum(cp.sum(s) for s in support_sq)), constraints)
    try:
        outcome = solve_with_fallback(problem, RetryConfig())
    except cp.error.SolverError as exc:
        logger.warning("Tube SDP solver failure", tau=tau, error=str(exc))
        return _Attempt(tau=tau, status=f"solver_error: {exc}")

    if not outcome.ok:
        return _Attempt(tau=tau, status=outcome.raw_status)
    E_values, gains = variables.values()
    if min(np.min(np.linalg.eigvalsh(E)) for E in E_values) <= 0.0:
        return _Attempt(tau=tau, status="indefinite_shape")
    multipliers = np.asarray(tau_local.value, dtype=float).ravel()
    for i, sub in enumerate(model.subsystems):
        if _disturbance_free(sub):
            E_N = neighborhood_block_diag(model, E_values, i)
            C_own = model.A_neighborhood(i) @ E_N + sub.B @ variables.Y[i].value
            C_own = C_own[:, model.neighborhood_slice(i, i)]
            multipliers[i] = _free_multiplier(tau, E_values[i], C_own, sub.G, sub.W.Q)
    return _Attempt(
        tau=tau,
        status=outcome.raw_status,
        objective=float(outcome.value),
        E=E_values,
        gains=gains,
        tau_local=multipliers,
    )


def _line_search(model: NetworkModel, fraction: float) -> tuple[_Attempt, list[_Attempt]]:
    grid = np.linspace(0.0, 1.0, settings.tau_grid_points + 2)[1:-1]
    with ThreadPoolExecutor(max_workers=settings.tau_workers) as pool:
        attempts = list(pool.map(lambda t: _solve_at_tau(model, float(t), fraction), grid))

    feasible = [k for k, a in enumerate(attempts) if a.feasible]
    if not feasible:
        return attempts[0], attempts
    k_best = min(feasible, key=lambda k: attempts[k].objective)
    best = attempts[k_best]

    # golden-section refinement between the neighbors of the best grid point
    lo = grid[k_best - 1] if k_best > 0 else grid[0] / 2.0
    hi = grid[k_best + 1] if k_best + 1 < len(grid) else (grid[-1] + 1.0) / 2.0
    cache: dict[float, _Attempt] = {}

    def evaluate(t: float) -> _Attempt:
        if t not in cache:
            cache[t] = _solve_at_tau(model, t, fraction)
            attempts.append(cache[t])
        return cache[t]

    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    for _ in range(settings.tau_search_iterations):
        if evaluate(c).objective <= evaluate(d).objective:
            b, d = d, c
            c = b - _GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + _GOLDEN * (b - a)
    for candidate in cache.values():
        if candidate.feasible and candidate.objective < best.objective:
            best = candidate
    return best, attempts


def synthesize_tube(
    model: NetworkModel,
    tau_fixed: Optional[float] = None,
    containment_fraction: Optional[float] = None,
) -> StructuredTube:
    """
    Synthesize shape matrices and structured gains of the RPI tube.

    Minimizes the summed squared supports of all constraint rows subject to
    the per-subsystem invariance LMI, the multiplier budget and the row-wise
    containment LMIs. Without ``tau_fixed`` the contraction multiplier
    tau_{M+1} is found by a grid plus golden-section line search over (0, 1).

    Args:
        model: Admissible network model
        tau_fixed: Contraction multiplier to use instead of the line search
        containment_fraction: Share of each original offset a support may use

    Returns:
        The synthesized StructuredTube

    Raises:
        TubeSynthesisError: If the SDP is infeasible at every tried tau
    """
    fraction = settings.containment_fraction if containment_fraction is None else containment_fraction

    if tau_fixed is not None:
        if not 0.0 < tau_fixed < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {tau_fixed}")
        best = _solve_at_tau(model, float(tau_fixed), fraction)
        attempts = [best]
    else:
        best, attempts = _line_search(model, fraction)

    if not best.feasible:
        raise TubeSynthesisError(
            "tube synthesis infeasible",
            attempts=[a.summary() for a in attempts],
        )

    assert best.E is not None and best.gains is not None and best.tau_local is not None
    inflate = 1.0 + RPI_INFLATION
    # best.gains already hold K_{Omega,i} = K_i P_{N_i}
    tube = StructuredTube.from_blocks(
        model,
        [np.linalg.inv(E) / inflate for E in best.E],
        best.gains,
        tau=best.tau,
        tau_local=best.tau_local / inflate,
        objective=best.objective,
    )
    logger.info(
        "Tube synthesized",
        tau=round(best.tau, 6),
        objective=best.objective,
        attempts=len(attempts),
    )
    return tube
