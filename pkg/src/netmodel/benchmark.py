"""Mass-spring-damper chain benchmark."""

from dataclasses import dataclass

import numpy as np
import structlog

from src.netmodel.model import NetworkModel, SubsystemSpec
from src.netmodel.sets import Ellipsoid, Polytope

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class ChainBounds:
    """Box bounds of the chain; ``tight_subsystem`` gets ``tight_upper`` as its position cap."""

    position: float = 1.0
    velocity: float = 1.0
    input: float = 5.0
    disturbance_level: float = 1.1e-3
    tight_subsystem: int | None = 1
    tight_upper: float = 0.1


def build_chain_benchmark(
    M: int = 9,
    mass: float = 1.0,
    spring: float = 0.1,
    damper: float = 0.1,
    dt: float = 0.2,
    bounds: ChainBounds | None = None,
) -> NetworkModel:
    """
    Build the Euler-discretized chain of M masses with free ends.

    Mass i has state (p_i, v_i) and force input F_i; neighbors are the
    chain-adjacent masses. Each spring/damper pulls toward its neighbor:
    m dv_i/dt = sum_j k (p_j - p_i) + d (v_j - v_i) + F_i. The disturbance
    enters as G_i = dt * I on (p_i, v_i).

    Args:
        M: Number of masses
        mass: Mass of every subsystem
        spring: Spring constant k (>= 0)
        damper: Damping constant d (>= 0)
        dt: Sampling time of the Euler step
        bounds: Constraint and disturbance bounds (defaults reproduce the benchmark)

    Returns:
        The chain as a NetworkModel

    Raises:
        ValueError: For M < 1 or nonpositive mass / dt, or negative k / d
    """
    if M < 1:
        raise ValueError(f"chain needs at least one mass, got M={M}")
    if dt <= 0.0:
        raise ValueError(f"sampling time must be positive, got dt={dt}")
    if mass <= 0.0:
        raise ValueError(f"mass must be positive, got {mass}")
    if spring < 0.0 or damper < 0.0:
        raise ValueError("spring and damper constants must be nonnegative")
    bounds = bounds or ChainBounds()

    subsystems = []
    for i in range(M):
        neighbors = tuple(j for j in (i - 1, i, i + 1) if 0 <= j < M)
        links = len(neighbors) - 1
        A = {
            i: np.array(
                [
                    [1.0, dt],
                    [-links * spring * dt / mass, 1.0 - links * damper * dt / mass],
                ]
            )
        }
        for j in neighbors:
            if j != i:
                A[j] = np.array([[0.0, 0.0], [spring * dt / mass, damper * dt / mass]])

        upper_p = bounds.position
        if bounds.tight_subsystem == i:
            upper_p = bounds.tight_upper
        local_box = Polytope.box(
            [-bounds.position, -bounds.velocity], [upper_p, bounds.velocity]
        )
        # embed the local box into neighborhood coordinates
        own = neighbors.index(i)
        H = np.zeros((local_box.n_rows, 2 * len(neighbors)))
        H[:, 2 * own : 2 * own + 2] = local_box.H

        subsystems.append(
            SubsystemSpec(
                index=i,
                n=2,
                m=1,
                p=2,
                neighbors=neighbors,
                A=A,
                B=np.array([[0.0], [dt / mass]]),
                G=dt * np.eye(2),
                X=Polytope.normalized(H, local_box.h),
                U=Polytope.normalized(np.array([[1.0], [-1.0]]), [bounds.input, bounds.input]),
                W=Ellipsoid(np.eye(2), bounds.disturbance_level),
            )
        )

    logger.debug("Chain benchmark built", M=M, dt=dt, spring=spring, damper=damper)
    return NetworkModel(tuple(subsystems))
