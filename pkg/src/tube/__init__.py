"""Structured RPI tube synthesis, verification and constraint tightening."""

from src.tube.synthesis import (
    StructuredTube,
    TubeSynthesisError,
    project_to_neighborhood_form,
    synthesize_tube,
)
from src.tube.tightening import (
    EmptyTightenedSetError,
    TightenedConstraints,
    tighten_constraints,
)
from src.tube.verify import (
    RpiCertificate,
    check_rpi_lmis,
    verify_budget_split_sampling,
    verify_rpi_monte_carlo,
)

__all__ = [
    "EmptyTightenedSetError",
    "RpiCertificate",
    "StructuredTube",
    "TightenedConstraints",
    "TubeSynthesisError",
    "check_rpi_lmis",
    "project_to_neighborhood_form",
    "synthesize_tube",
    "tighten_constraints",
    "verify_budget_split_sampling",
    "verify_rpi_monte_carlo",
]
