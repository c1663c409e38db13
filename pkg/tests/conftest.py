"""
Pytest configuration and fixtures.
"""

import numpy as np
import pytest

from src.artifacts import SafetyArtifacts, synthesize_artifacts
from src.core.config import settings
from src.core.log import configure_logging
from src.netmodel import (
    Ellipsoid,
    NetworkModel,
    Polytope,
    SubsystemSpec,
    build_chain_benchmark,
)


def scalar_model(a: float = 0.5, q: float = 1e-3, x_max: float = 1.0, u_max: float = 1.0) -> NetworkModel:
    """x+ = a x + u + w with |x| <= x_max, |u| <= u_max and w^2 <= q."""
    return NetworkModel(
        (
            SubsystemSpec(
                index=0,
                n=1,
                m=1,
                p=1,
                neighbors=(0,),
                A={0: np.array([[a]])},
                B=np.array([[1.0]]),
                G=np.array([[1.0]]),
                X=Polytope.box([-x_max], [x_max]),
                U=Polytope.box([-u_max], [u_max]),
                W=Ellipsoid(np.eye(1), q),
            ),
        )
    )


@pytest.fixture(scope="session", autouse=True)
def stderr_logging():
    """Route structlog output to stderr for the whole session."""
    configure_logging()


@pytest.fixture
def scalar():
    """Stable scalar subsystem with a small disturbance."""
    return scalar_model()


@pytest.fixture(scope="session")
def chain3():
    """Three-mass chain with the benchmark parameters."""
    return build_chain_benchmark(M=3)


@pytest.fixture(scope="session")
def chain3_artifacts(chain3) -> SafetyArtifacts:
    """Artifacts of the three-mass chain at the preset contraction factor."""
    return synthesize_artifacts(chain3, tau=settings.tau_preset)


@pytest.fixture(scope="session")
def benchmark():
    """Nine-mass chain benchmark."""
    return build_chain_benchmark(M=9)


@pytest.fixture(scope="session")
def benchmark_artifacts(benchmark) -> SafetyArtifacts:
    """Artifacts of the nine-mass benchmark at the preset contraction factor."""
    return synthesize_artifacts(benchmark, tau=settings.tau_preset)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)
