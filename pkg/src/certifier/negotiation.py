"""Zero-sum negotiation of the tube budgets beta_i among neighbors."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class NegotiationRows:
    """
    Local rows sum_{j in N_i \\ i} dbeta_j / (|N_j| - 1) = 0.

    ``matrix`` has one row per owner in ``owners`` (agents with at least one
    neighbor). ``pinned`` lists the increments that occur in no row; they are
    fixed to zero so the increments still sum to zero.
    """

    matrix: np.ndarray
    owners: tuple[int, ...]
    pinned: tuple[int, ...]

    def row_of(self, i: int) -> np.ndarray | None:
        if i not in self.owners:
            return None
        return self.matrix[self.owners.index(i)]

    def residual(self, delta_beta: np.ndarray) -> np.ndarray:
        """Row values plus the pinned entries; all zero iff delta_beta is admissible."""
        delta_beta = np.asarray(delta_beta, dtype=float)
        return np.concatenate([self.matrix @ delta_beta, delta_beta[list(self.pinned)]])

    def constraint_matrix(self) -> np.ndarray:
        """Rows and pins stacked into one matrix whose null space is the admissible set."""
        M = self.matrix.shape[1]
        pins = np.zeros((len(self.pinned), M))
        for r, j in enumerate(self.pinned):
            pins[r, j] = 1.0
        return np.vstack([self.matrix, pins])


def negotiation_rows(neighborhoods: Sequence[Sequence[int]]) -> NegotiationRows:
    """Build the negotiation rows for an undirected neighborhood graph."""
    M = len(neighborhoods)
    degree = [len(set(N)) - 1 for N in neighborhoods]
    rows, owners = [], []
    appears = np.zeros(M, dtype=bool)
    for i, N in enumerate(neighborhoods):
        others = sorted(set(N) - {i})
        if not others:
            continue
        row = np.zeros(M)
        for j in others:
            row[j] = 1.0 / degree[j]
            appears[j] = True
        rows.append(row)
        owners.append(i)
    matrix = np.vstack(rows) if rows else np.zeros((0, M))
    return NegotiationRows(
        matrix=matrix,
        owners=tuple(owners),
        pinned=tuple(int(j) for j in np.flatnonzero(~appears)),
    )
