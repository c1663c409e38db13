"""Local stage costs l_i(x_{N_i}, u_i) = 1/2 |x_{N_i}|^2 + |u_i|^2."""

import numpy as np

from src.netmodel import DimensionError, NetworkModel


def stage_cost(x_neighborhood: np.ndarray, u_i: np.ndarray) -> float:
    x_neighborhood = np.atleast_1d(np.asarray(x_neighborhood, dtype=float))
    u_i = np.atleast_1d(np.asarray(u_i, dtype=float))
    return float(0.5 * x_neighborhood @ x_neighborhood + u_i @ u_i)


def stage_costs(model: NetworkModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-subsystem stage costs of a global state and input."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.size != model.n or u.size != model.m:
        raise DimensionError(f"expected state {model.n} and input {model.m}, got {x.size} and {u.size}")
    return np.array(
        [stage_cost(model.neighborhood(x, i), u[model.input_slice(i)]) for i in range(model.M)]
    )


def state_weight(model: NetworkModel) -> np.ndarray:
    """Q with x'Qx = sum_i |x_{N_i}|^2."""
    return sum(W.T @ W for W in model.W_maps)
