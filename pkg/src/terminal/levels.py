"""Local terminal levels alpha_i(t): membership, updates and certificate checks."""

from typing import Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel

from src.core.config import settings
from src.netmodel import NetworkModel
from src.netmodel.sets import sample_ellipsoid
from src.terminal.synthesis import TerminalIngredients
from src.tube.tightening import TightenedConstraints

logger = structlog.get_logger(__name__)


class NegativeLevelError(ValueError):
    """Raised when a local terminal level is negative."""
    pass


def check_terminal_membership(
    z_i: np.ndarray,
    P_f_i: np.ndarray,
    alpha_i: float,
    slack: Optional[float] = None,
) -> bool:
    """True iff z_i' P_{f,i} z_i <= alpha_i + slack."""
    slack = settings.membership_slack if slack is None else slack
    z_i = np.atleast_1d(np.asarray(z_i, dtype=float))
    return float(z_i @ np.atleast_2d(P_f_i) @ z_i) <= alpha_i + slack


def update_alpha(
    ingredients: TerminalIngredients,
    alpha: Sequence[float],
    z_neighborhoods: Sequence[np.ndarray],
) -> np.ndarray:
    """
    alpha_i(t+1) = max(0, alpha_i(t) + z_{N_i}' Gamma_{N_i} z_{N_i}).

    Args:
        ingredients: Terminal ingredients holding Gamma_{N_i}
        alpha: Current local levels alpha_i(t)
        z_neighborhoods: Predicted terminal neighborhood states z*_{N_i}(N|t)

    Returns:
        Updated local levels

    Raises:
        NegativeLevelError: If any input level is negative
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0.0):
        raise NegativeLevelError(f"terminal levels must be nonnegative, got {alpha.tolist()}")
    increments = np.array(
        [float(z @ G @ z) for z, G in zip(z_neighborhoods, ingredients.Gamma)]
    )
    return np.maximum(alpha + increments, 0.0)


class TerminalCertificate(BaseModel):
    """Decrease, containment and sampled invariance of a terminal set."""

    decrease_max_eig: float
    min_state_margin: float
    min_input_margin: float
    invariance_violations: int
    input_violations: int
    samples: int
    tolerance: float
    decrease_tolerance: float

    @property
    def ok(self) -> bool:
        return (
            self.decrease_max_eig <= self.decrease_tolerance
            and self.min_state_margin >= -self.tolerance
            and self.min_input_margin >= -self.tolerance
            and self.invariance_violations == 0
            and self.input_violations == 0
        )


def verify_terminal(
    ingredients: TerminalIngredients,
    model: NetworkModel,
    tightened: TightenedConstraints,
    samples: int = 1000,
    seed: int = 0,
) -> TerminalCertificate:
    """
    Check the decrease certificate, row-support containment and sampled
    invariance on the boundary {z : z' P_f z = alpha_bar}.

    The decrease tolerance scales with the norm of P_f.
    """
    slack = settings.membership_slack
    mats = model.global_matrices
    A_cl = mats.A + mats.B @ ingredients.K
    E = np.linalg.inv(ingredients.P)
    scale = np.sqrt(ingredients.alpha_bar)

    state_margins, input_margins = [], []
    for i in range(model.M):
        W_i = model.W_maps[i]
        rows_x = tightened.X_bar[i].H @ W_i
        rows_u = tightened.U_bar[i].H @ ingredients.K[model.input_slice(i), :]
        support_x = np.sqrt(np.einsum("ij,jk,ik->i", rows_x, E, rows_x))
        support_u = np.sqrt(np.einsum("ij,jk,ik->i", rows_u, E, rows_u))
        state_margins.append(np.min(tightened.X_bar[i].h - scale * support_x))
        input_margins.append(np.min(tightened.U_bar[i].h - scale * support_u))

    rng = np.random.default_rng(seed)
    z = sample_ellipsoid(ingredients.P, ingredients.alpha_bar, rng, samples, boundary=True)
    z_next = z @ A_cl.T
    levels = np.einsum("ij,jk,ik->i", z_next, ingredients.P, z_next)
    invariance_violations = int(np.count_nonzero(levels > ingredients.alpha_bar + slack))
    u = z @ ingredients.K.T
    input_violations = int(
        sum(
            np.count_nonzero(
                np.max(u[:, model.input_slice(i)] @ tightened.U_bar[i].H.T - tightened.U_bar[i].h, axis=1)
                > slack
            )
            for i in range(model.M)
        )
    )

    decrease = ingredients.decrease_matrix(model)
    return TerminalCertificate(
        decrease_max_eig=float(np.max(np.linalg.eigvalsh(0.5 * (decrease + decrease.T)))),
        min_state_margin=float(min(state_margins)),
        min_input_margin=float(min(input_margins)),
        invariance_violations=invariance_violations,
        input_violations=input_violations,
        samples=samples,
        tolerance=settings.sdp_feasibility_tol,
        decrease_tolerance=settings.sdp_feasibility_tol * max(1.0, float(np.linalg.norm(ingredients.P, 2))),
    )
