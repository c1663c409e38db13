"""Structured ellipsoidal terminal set and terminal control law."""

from dataclasses import dataclass
from typing import Optional

import cvxpy as cp
import numpy as np
import structlog

from src.core.config import settings
from src.core.retry import RetryConfig, solve_with_fallback
from src.netmodel import NetworkModel
from src.tube.lmi import StructuredVariables, psd, row_support_lmi
from src.tube.tightening import TightenedConstraints

logger = structlog.get_logger(__name__)


class TerminalSynthesisError(RuntimeError):
    """Raised when the terminal LMI has no solution."""
    pass


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    """
    Terminal set X_f = {z : sum_i z_i' P_{f,i} z_i <= alpha_bar} and gains K_{f,i}.

    ``Gamma[i]`` is the neighborhood residual
    (A_{N_i} + B_i K_{f,i})' P_{f,i} (A_{N_i} + B_i K_{f,i}) - W_i T_i' P_{f,i} T_i W_i';
    lifted and summed these give A_cl' P_f A_cl - P_f.
    """

    P_blocks: list[np.ndarray]
    gains: list[np.ndarray]
    Gamma: list[np.ndarray]
    alpha_bar: float
    alpha0: np.ndarray
    P: np.ndarray
    K: np.ndarray

    @classmethod
    def from_blocks(
        cls,
        model: NetworkModel,
        P_blocks: list[np.ndarray],
        gains: list[np.ndarray],
        alpha_bar: float,
        alpha0: Optional[np.ndarray] = None,
    ) -> "TerminalIngredients":
        if alpha_bar <= 0.0:
            raise ValueError(f"terminal level budget must be positive, got {alpha_bar}")
        P_blocks = [0.5 * (np.atleast_2d(P) + np.atleast_2d(P).T) for P in P_blocks]
        gains = [np.atleast_2d(np.asarray(K, dtype=float)) for K in gains]
        Gamma = []
        for i, sub in enumerate(model.subsystems):
            A_cl = model.A_neighborhood(i) + sub.B @ gains[i]
            lifted = (
                model.W_maps[i] @ model.T_maps[i].T @ P_blocks[i] @ model.T_maps[i] @ model.W_maps[i].T
            )
            G_i = A_cl.T @ P_blocks[i] @ A_cl - lifted
            Gamma.append(0.5 * (G_i + G_i.T))
        if alpha0 is None:
            alpha0 = np.full(model.M, alpha_bar / model.M)
        return cls(
            P_blocks=P_blocks,
            gains=gains,
            Gamma=Gamma,
            alpha_bar=float(alpha_bar),
            alpha0=np.asarray(alpha0, dtype=float),
            P=model.block_diag(P_blocks),
            K=model.lift_gains(gains),
        )

    def decrease_matrix(self, model: NetworkModel) -> np.ndarray:
        """Sum_i W_i' Gamma_i W_i, equal to A_cl' P_f A_cl - P_f."""
        return sum(W.T @ G @ W for W, G in zip(model.W_maps, self.Gamma))


def level_budget(
    model: NetworkModel,
    tightened: TightenedConstraints,
    P: np.ndarray,
    K: np.ndarray,
) -> float:
    """
    Largest alpha with {z : z' P z <= alpha} inside X_bar and K z inside U_bar.

    Closed form of the scalar search: min over rows of offset^2 / (c P^-1 c').
    """
    E = np.linalg.inv(P)
    ratios = []
    for i, sub in enumerate(model.subsystems):
        W_i = model.W_maps[i]
        K_i = K[model.input_slice(i), :]
        for rows, offsets in (
            (tightened.X_bar[i].H @ W_i, tightened.X_bar[i].h),
            (tightened.U_bar[i].H @ K_i, tightened.U_bar[i].h),
        ):
            support_sq = np.einsum("ij,jk,ik->i", rows, E, rows)
            active = support_sq > 1e-15
            ratios.extend((offsets[active] ** 2 / support_sq[active]).tolist())
    return float(min(ratios)) if ratios else float("inf")


@dataclass(frozen=True)
class _DecreaseCheck:
    """Post-solve re-check of a terminal candidate."""

    solver: str
    residual: float
    spectral_radius: float

    @property
    def ok(self) -> bool:
        return self.residual <= settings.sdp_feasibility_tol and self.spectral_radius < 1.0


def _check_candidate(
    model: NetworkModel,
    E_values: list[np.ndarray],
    gains: list[np.ndarray],
    lam: float,
    solver: str,
) -> _DecreaseCheck:
    """
    Largest eigenvalue of (A E + B K E)' E^-1 (A E + B K E) - lam E, relative
    to the norm of E, and the spectral radius of A + B K.
    """
    mats = model.global_matrices
    E = model.block_diag(E_values)
    A_cl = mats.A + mats.B @ model.lift_gains(gains)
    AE = A_cl @ E
    residual = AE.T @ np.linalg.solve(E, AE) - lam * E
    residual = 0.5 * (residual + residual.T)
    scale = max(1.0, float(np.linalg.norm(E, 2)))
    return _DecreaseCheck(
        solver=solver,
        residual=float(np.max(np.linalg.eigvalsh(residual))) / scale,
        spectral_radius=float(np.max(np.abs(np.linalg.eigvals(A_cl)))),
    )


def synthesize_terminal(
    model: NetworkModel,
    tightened: TightenedConstraints,
    contraction: Optional[float] = None,
) -> TerminalIngredients:
    """
    Solve for a block-diagonal terminal shape and structured terminal gains.

    Variables are E_f = P_f^-1 (block-diagonal, bounded below by
    ``settings.terminal_min_shape``) and Y_i = K_{f,i} E_{f,N_i}.
    The global decrease inequality A_cl' P_f A_cl <= lambda P_f is imposed
    in Schur form; row-wise containment LMIs against the tightened offsets
    use the same builders as the tube synthesis. The log-volume of E_f is
    maximized, then alpha_bar is the largest admissible level.

    Each solver in the retry order is tried on its own; the first solution
    that passes the decrease re-check is kept.

    Raises:
        TerminalSynthesisError: If the LMI is infeasible, the solvers fail,
            or no solution passes the decrease re-check
    """
    lam = settings.terminal_contraction if contraction is None else contraction
    mats = model.global_matrices
    variables = StructuredVariables(model, min_shape=settings.terminal_min_shape)
    constraints = variables.constraints()

    E = variables.E_global()
    closed_loop = mats.A @ E + mats.B @ variables.KE_global()
    constraints.append(psd(cp.bmat([[lam * E, closed_loop.T], [closed_loop, E]]), settings.psd_margin))

    for i in range(model.M):
        E_N = variables.E_neighborhood(i)
        X_bar, U_bar = tightened.X_bar[i], tightened.U_bar[i]
        for j in range(X_bar.n_rows):
            constraints.append(
                row_support_lmi(X_bar.h[j] ** 2, X_bar.H[j : j + 1, :] @ E_N, E_N)
            )
        for j in range(U_bar.n_rows):
            constraints.append(
                row_support_lmi(U_bar.h[j] ** 2, U_bar.H[j : j + 1, :] @ variables.Y[i], E_N)
            )

    objective = cp.Maximize(sum(cp.log_det(E_i) for E_i in variables.E))
    problem = cp.Problem(objective, constraints)

    checks: list[_DecreaseCheck] = []
    accepted = None
    for solver in RetryConfig().solvers:
        try:
            outcome = solve_with_fallback(problem, RetryConfig(solvers=(solver,)))
        except cp.error.SolverError as exc:
            logger.warning("Terminal solve failed", solver=solver, error=str(exc))
            continue
        if not outcome.ok:
            logger.warning("Terminal solve infeasible", solver=solver, status=outcome.raw_status)
            continue
        E_values, gains = variables.values()
        check = _check_candidate(model, E_values, gains, lam, solver)
        checks.append(check)
        if check.ok:
            accepted = (E_values, gains, check)
            break
        logger.warning(
            "Terminal solution rejected",
            solver=solver,
            residual=check.residual,
            spectral_radius=check.spectral_radius,
        )
    if accepted is None:
        detail = ", ".join(
            f"{c.solver}: residual {c.residual:.3g}, radius {c.spectral_radius:.3g}" for c in checks
        )
        raise TerminalSynthesisError(
            f"terminal synthesis found no certified solution ({detail or 'no solve'})"
        )

    E_values, gains, check = accepted
    P_blocks = [np.linalg.inv(E_i) for E_i in E_values]
    P = model.block_diag(P_blocks)
    alpha_bar = level_budget(model, tightened, P, model.lift_gains(gains))
    if not np.isfinite(alpha_bar) or alpha_bar <= 0.0:
        raise TerminalSynthesisError(f"terminal synthesis produced level budget {alpha_bar}")

    ingredients = TerminalIngredients.from_blocks(model, P_blocks, gains, alpha_bar)
    logger.info(
        "Terminal ingredients synthesized",
        alpha_bar=alpha_bar,
        contraction=lam,
        solver=check.solver,
        residual=check.residual,
        spectral_radius=check.spectral_radius,
    )
    return ingredients
