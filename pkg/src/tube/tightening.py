"""Constraint tightening X_bar = X - Omega, U_bar = U - K Omega."""

from dataclasses import dataclass

import numpy as np
import structlog

from src.netmodel import NetworkModel, Polytope
from src.tube.synthesis import StructuredTube

logger = structlog.get_logger(__name__)


class EmptyTightenedSetError(ValueError):
    """Raised when tightening consumes a whole constraint offset."""

    def __init__(self, kind: str, subsystem: int, row: int, offset: float, support: float):
        self.kind = kind
        self.subsystem = subsystem
        self.row = row
        super().__init__(
            f"empty tightened set: {kind} row {row} of subsystem {subsystem} "
            f"(offset {offset:.6g}, tube support {support:.6g})"
        )


@dataclass(frozen=True, eq=False)
class TightenedConstraints:
    """Tightened neighborhood state polytopes and input polytopes."""

    X_bar: list[Polytope]
    U_bar: list[Polytope]
    state_support: list[np.ndarray]
    input_support: list[np.ndarray]


def _support(rows: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Support of {e : e' E^-1 e <= 1} along each row: sqrt(c E c')."""
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", rows, E, rows), 0.0))


def tighten_constraints(model: NetworkModel, tube: StructuredTube) -> TightenedConstraints:
    """
    Shrink every constraint row by the tube's support along the lifted row.

    State rows c of X_{N_i} are lifted to c W_i, input rows o of U_i to
    o K_{Omega,i} W_i; the offset drops by sqrt(c~ P^-1 c~').

    Raises:
        EmptyTightenedSetError: If some tightened offset is nonpositive
    """
    eigenvalues = np.linalg.eigvalsh(tube.P)
    if np.min(eigenvalues) <= 0.0:
        raise ValueError("tube shape P must be positive definite for tightening")
    E = np.linalg.inv(tube.P)

    X_bar, U_bar, state_support, input_support = [], [], [], []
    for i, sub in enumerate(model.subsystems):
        W_i = model.W_maps[i]
        s_x = _support(sub.X.H @ W_i, E)
        s_u = _support(sub.U.H @ tube.gains[i] @ W_i, E)
        h_bar = sub.X.h - s_x
        o_bar = sub.U.h - s_u
        for kind, offsets, original, support in (
            ("state", h_bar, sub.X.h, s_x),
            ("input", o_bar, sub.U.h, s_u),
        ):
            bad = np.flatnonzero(offsets <= 0.0)
            if bad.size:
                j = int(bad[0])
                raise EmptyTightenedSetError(kind, i, j, float(original[j]), float(support[j]))
        X_bar.append(Polytope(sub.X.H, h_bar))
        U_bar.append(Polytope(sub.U.H, o_bar))
        state_support.append(s_x)
        input_support.append(s_u)

    logger.info(
        "Constraints tightened",
        min_state_offset=float(min(np.min(p.h) for p in X_bar)),
        min_input_offset=float(min(np.min(p.h) for p in U_bar)),
    )
    return TightenedConstraints(X_bar, U_bar, state_support, input_support)
