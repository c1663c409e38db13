"""Coupled linear network model, admissibility checks and the chain benchmark."""

from src.netmodel.benchmark import ChainBounds, build_chain_benchmark
from src.netmodel.io import ModelValidationError, load_model, save_model
from src.netmodel.model import (
    DisturbanceBoundError,
    GlobalMatrices,
    NetworkModel,
    SubsystemSpec,
    step_truth,
)
from src.netmodel.sets import DimensionError, Ellipsoid, Polytope
from src.netmodel.validation import ValidationReport, validate

__all__ = [
    "ChainBounds",
    "DimensionError",
    "DisturbanceBoundError",
    "Ellipsoid",
    "GlobalMatrices",
    "ModelValidationError",
    "NetworkModel",
    "Polytope",
    "SubsystemSpec",
    "ValidationReport",
    "build_chain_benchmark",
    "load_model",
    "save_model",
    "step_truth",
    "validate",
]
