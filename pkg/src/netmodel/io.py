"""JSON model definition files."""

from pathlib import Path
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field

from src.netmodel.model import NetworkModel, SubsystemSpec
from src.netmodel.sets import Ellipsoid, Polytope
from src.netmodel.validation import ValidationReport, validate

logger = structlog.get_logger(__name__)

Matrix = list[list[float]]


class ModelValidationError(ValueError):
    """Raised when a model file describes an inadmissible network."""

    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__("inadmissible model: " + "; ".join(report.issues))


class StateConstraintsModel(BaseModel):
    H: Matrix
    h: list[float]


class InputConstraintsModel(BaseModel):
    O: Matrix
    o: list[float]


class DisturbanceSetModel(BaseModel):
    Q: Matrix
    q: float = Field(ge=0.0)


class SubsystemModel(BaseModel):
    """One entry of ``subsystems[]``; A is keyed by neighbor index."""

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    p: int = Field(ge=1)
    A: dict[int, Matrix]
    B: Matrix
    G: Matrix
    X: StateConstraintsModel
    U: InputConstraintsModel
    W: DisturbanceSetModel
    neighbors: Optional[list[int]] = Field(
        default=None,
        description="Defaults to the own index plus the keys of A",
    )


class ModelFile(BaseModel):
    subsystems: list[SubsystemModel]


def model_from_file(data: ModelFile) -> NetworkModel:
    subsystems = []
    for i, entry in enumerate(data.subsystems):
        neighbors = entry.neighbors if entry.neighbors is not None else [i, *entry.A]
        subsystems.append(
            SubsystemSpec(
                index=i,
                n=entry.n,
                m=entry.m,
                p=entry.p,
                neighbors=tuple(neighbors),
                A={j: np.array(a, dtype=float) for j, a in entry.A.items()},
                B=np.array(entry.B, dtype=float),
                G=np.array(entry.G, dtype=float),
                X=Polytope.normalized(np.array(entry.X.H), np.array(entry.X.h)),
                U=Polytope.normalized(np.array(entry.U.O), np.array(entry.U.o)),
                W=Ellipsoid(np.array(entry.W.Q), entry.W.q),
            )
        )
    return NetworkModel(tuple(subsystems))


def model_to_file(model: NetworkModel) -> ModelFile:
    return ModelFile(
        subsystems=[
            SubsystemModel(
                n=sub.n,
                m=sub.m,
                p=sub.p,
                A={j: a.tolist() for j, a in sub.A.items()},
                B=sub.B.tolist(),
                G=sub.G.tolist(),
                X=StateConstraintsModel(H=sub.X.H.tolist(), h=sub.X.h.tolist()),
                U=InputConstraintsModel(O=sub.U.H.tolist(), o=sub.U.h.tolist()),
                W=DisturbanceSetModel(Q=sub.W.Q.tolist(), q=sub.W.q),
                neighbors=list(sub.neighbors),
            )
            for sub in model.subsystems
        ]
    )


def load_model(path: str | Path) -> NetworkModel:
    """
    Load and validate a model definition file.

    Raises:
        ModelValidationError: If the described model violates any invariant
    """
    data = ModelFile.model_validate_json(Path(path).read_text(encoding="utf-8"))
    model = model_from_file(data)
    report = validate(model)
    if not report.ok:
        raise ModelValidationError(report)
    logger.info("Model loaded", path=str(path), subsystems=model.M, states=model.n)
    return model


def save_model(model: NetworkModel, path: str | Path) -> None:
    Path(path).write_text(model_to_file(model).model_dump_json(indent=2), encoding="utf-8")
