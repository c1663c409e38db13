"""LMI building blocks shared by tube, terminal and policy synthesis."""

from typing import Sequence

import cvxpy as cp
import numpy as np

from src.netmodel import NetworkModel


def psd(expr: cp.Expression, margin: float = 0.0) -> cp.Constraint:
    """Constrain a (structurally symmetric) matrix expression to be PSD with margin*I."""
    size = expr.shape[0]
    return 0.5 * (expr + expr.T) >> margin * np.eye(size)


def scalar_block(value: cp.Expression) -> cp.Expression:
    """Lift a scalar expression into a 1 x 1 block for ``cp.bmat``."""
    return value * np.ones((1, 1))


def block_diag_expr(blocks: Sequence[cp.Expression], sizes: Sequence[int]) -> cp.Expression:
    """Block-diagonal matrix expression from square blocks."""
    rows = []
    for a, block in enumerate(blocks):
        row = []
        for b in range(len(blocks)):
            row.append(block if a == b else np.zeros((sizes[a], sizes[b])))
        rows.append(row)
    return cp.bmat(rows)


def row_support_lmi(
    bound_sq: cp.Expression,
    row_times_shape: cp.Expression,
    shape: cp.Expression,
    margin: float = 0.0,
) -> cp.Constraint:
    """
    Schur form of ``row shape^-1 row' <= bound_sq`` where the row enters as row*shape.

    For an ellipsoid {e : e' shape^-1 e <= 1} this bounds the support of the
    row by sqrt(bound_sq).
    """
    return psd(
        cp.bmat(
            [
                [scalar_block(bound_sq), row_times_shape],
                [row_times_shape.T, shape],
            ]
        ),
        margin,
    )


class StructuredVariables:
    """
    Block-diagonal shape inverses E_i and neighborhood-structured gain variables.

    The gain variable Y_i (m_i x n_{N_i}) represents K_i E_{N_i}, so the global
    product K E equals ``stack_i(Y_i W_i)``.
    """

    def __init__(self, model: NetworkModel, min_shape: float = 0.0):
        self.model = model
        self.E = [
            cp.Variable((sub.n, sub.n), symmetric=True, name=f"E_{i}")
            for i, sub in enumerate(model.subsystems)
        ]
        self.Y = [
            cp.Variable((sub.m, model.neighborhood_dim(i)), name=f"Y_{i}")
            for i, sub in enumerate(model.subsystems)
        ]
        self.min_shape = min_shape

    def constraints(self) -> list[cp.Constraint]:
        return [psd(E_i, self.min_shape) for E_i in self.E]

    def E_neighborhood(self, i: int) -> cp.Expression:
        neighbors = self.model[i].neighbors
        if len(neighbors) == 1:
            return self.E[i]
        return block_diag_expr(
            [self.E[j] for j in neighbors], [self.model[j].n for j in neighbors]
        )

    def E_global(self) -> cp.Expression:
        if self.model.M == 1:
            return self.E[0]
        return block_diag_expr(self.E, [sub.n for sub in self.model.subsystems])

    def KE_global(self) -> cp.Expression:
        return cp.vstack([self.Y[i] @ self.model.W_maps[i] for i in range(self.model.M)])

    def values(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Symmetrized E_i values and the recovered gains K_i = Y_i E_{N_i}^-1."""
        E_values = [0.5 * (E_i.value + E_i.value.T) for E_i in self.E]
        gains = []
        for i, sub in enumerate(self.model.subsystems):
            E_N = neighborhood_block_diag(self.model, E_values, i)
            gains.append(np.linalg.solve(E_N.T, self.Y[i].value.T).T)
        return E_values, gains


def neighborhood_block_diag(
    model: NetworkModel, blocks: Sequence[np.ndarray], i: int
) -> np.ndarray:
    """diag_{j in N_i}(blocks[j]) as a dense array."""
    neighbors = model[i].neighbors
    sizes = [model[j].n for j in neighbors]
    out = np.zeros((sum(sizes), sum(sizes)))
    start = 0
    for j, size in zip(neighbors, sizes):
        out[start : start + size, start : start + size] = blocks[j]
        start += size
    return out
