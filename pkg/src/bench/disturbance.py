"""Disturbance sampling for closed-loop runs."""

import numpy as np

from src.netmodel import Ellipsoid, NetworkModel
from src.netmodel.sets import sample_ellipsoid


def sample_disturbance(W: Ellipsoid, rng: np.random.Generator, boundary: bool = False) -> np.ndarray:
    """w uniform in {w : w' Q w <= q}, or on its surface with ``boundary``."""
    return sample_ellipsoid(W.Q, W.q, rng, 1, boundary=boundary)[0]


def sample_global_disturbance(
    model: NetworkModel,
    rng: np.random.Generator,
    boundary: bool = False,
) -> np.ndarray:
    """Independent w_i for every subsystem, stacked."""
    if model.p == 0:
        return np.zeros(0)
    return np.concatenate([sample_disturbance(sub.W, rng, boundary) for sub in model.subsystems])
