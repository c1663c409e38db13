"""Constraint and disturbance sets: polytopes {Hx <= h} and ellipsoids {v'Qv <= q}."""

from dataclasses import dataclass

import numpy as np

from src.core.config import settings


class DimensionError(ValueError):
    """Raised when array shapes do not match the model."""
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Polytope:
    """Polytope {x : H x <= h}."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float)).ravel()
        if H.shape[0] != h.shape[0]:
            raise DimensionError(f"H has {H.shape[0]} rows but h has {h.shape[0]} entries")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "h", _frozen(h))

    @classmethod
    def normalized(cls, H: np.ndarray, h: np.ndarray) -> "Polytope":
        """Build a polytope with every nonzero row of H scaled to unit norm."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        h = np.atleast_1d(np.asarray(h, dtype=float)).ravel()
        norms = np.linalg.norm(H, axis=1)
        scale = np.where(norms > 0.0, norms, 1.0)
        return cls(H / scale[:, None], h / scale)

    @classmethod
    def box(cls, lower: np.ndarray, upper: np.ndarray) -> "Polytope":
        """Axis-aligned box lower <= x <= upper."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @property
    def dim(self) -> int:
        return int(self.H.shape[1])

    @property
    def n_rows(self) -> int:
        return int(self.H.shape[0])

    def violation(self, x: np.ndarray) -> float:
        """Largest row excess max_j (H x - h)_j (negative when strictly inside)."""
        if self.n_rows == 0:
            return -np.inf
        return float(np.max(self.H @ np.asarray(x, dtype=float) - self.h))

    def contains(self, x: np.ndarray, slack: float | None = None) -> bool:
        slack = settings.membership_slack if slack is None else slack
        return self.violation(x) <= slack

    def issues(self) -> list[str]:
        """Violated polytope invariants, as human-readable strings."""
        found = []
        zero_rows = np.flatnonzero(np.linalg.norm(self.H, axis=1) == 0.0)
        if zero_rows.size:
            found.append(f"zero constraint rows {zero_rows.tolist()}")
        nonpositive = np.flatnonzero(self.h <= 0.0)
        if nonpositive.size:
            found.append(f"nonpositive offsets in rows {nonpositive.tolist()} (origin not interior)")
        return found


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Ellipsoid {v : v' Q v <= q}."""

    Q: np.ndarray
    q: float

    def __post_init__(self) -> None:
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise DimensionError(f"ellipsoid shape must be square, got {Q.shape}")
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "q", float(self.q))

    @property
    def dim(self) -> int:
        return int(self.Q.shape[0])

    def level(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.Q @ v)

    def contains(self, v: np.ndarray, slack: float | None = None) -> bool:
        slack = settings.membership_slack if slack is None else slack
        return self.level(v) <= self.q + slack

    def issues(self, tol: float = 1e-9) -> list[str]:
        found = []
        if not np.allclose(self.Q, self.Q.T, atol=tol):
            found.append("disturbance shape not symmetric")
        elif np.min(np.linalg.eigvalsh(self.Q)) < -tol:
            found.append("disturbance shape not positive semidefinite")
        if self.q < 0.0:
            found.append("negative disturbance level")
        return found


def sample_ellipsoid(
    shape: np.ndarray,
    level: float,
    rng: np.random.Generator,
    size: int,
    boundary: bool = False,
) -> np.ndarray:
    """
    Draw points uniformly in (or on the surface of) {v : v' shape v <= level}.

    Directions in the null space of ``shape`` are unbounded and left at zero.

    Args:
        shape: Symmetric PSD matrix
        level: Nonnegative level
        rng: Random generator
        size: Number of samples
        boundary: Sample the surface instead of the volume

    Returns:
        Array of shape (size, dim)
    """
    shape = np.atleast_2d(np.asarray(shape, dtype=float))
    dim = shape.shape[0]
    if level <= 0.0 or dim == 0:
        return np.zeros((size, dim))
    eigenvalues, vectors = np.linalg.eigh(0.5 * (shape + shape.T))
    positive = eigenvalues > 1e-12 * max(1.0, float(np.max(np.abs(eigenvalues))))
    k = int(np.count_nonzero(positive))
    if k == 0:
        return np.zeros((size, dim))

    directions = rng.standard_normal((size, k))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    if boundary:
        radii = np.ones((size, 1))
    else:
        radii = rng.random((size, 1)) ** (1.0 / k)
    y = directions * radii
    scale = np.sqrt(level) / np.sqrt(eigenvalues[positive])
    return (y * scale) @ vectors[:, positive].T
