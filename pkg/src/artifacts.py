"""Offline synthesis artifacts (tube, tightened constraints, terminal ingredients) and their file format."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field

from src.netmodel import NetworkModel, Polytope
from src.terminal import TerminalIngredients, synthesize_terminal
from src.tube import (
    StructuredTube,
    TightenedConstraints,
    synthesize_tube,
    tighten_constraints,
)

logger = structlog.get_logger(__name__)

Matrix = list[list[float]]


@dataclass(frozen=True, eq=False)
class SafetyArtifacts:
    """Everything the online certifier needs besides the model."""

    tube: StructuredTube
    tightened: TightenedConstraints
    terminal: TerminalIngredients


def synthesize_artifacts(
    model: NetworkModel,
    tau: Optional[float] = None,
    terminal_contraction: Optional[float] = None,
) -> SafetyArtifacts:
    """Tube synthesis, tightening and terminal synthesis in sequence."""
    tube = synthesize_tube(model, tau_fixed=tau)
    tightened = tighten_constraints(model, tube)
    terminal = synthesize_terminal(model, tightened, contraction=terminal_contraction)
    return SafetyArtifacts(tube=tube, tightened=tightened, terminal=terminal)


# =============================================================================
# File schema
# =============================================================================


class PolytopeFile(BaseModel):
    H: Matrix
    h: list[float]


class TubeSection(BaseModel):
    P: list[Matrix] = Field(description="Shape blocks P_i")
    K: list[Matrix] = Field(description="Neighborhood gains K_{Omega,i}")
    tau: Optional[float] = None
    tau_local: list[float]
    objective: Optional[float] = None


class TightenedSection(BaseModel):
    X: list[PolytopeFile]
    U: list[PolytopeFile]


class TerminalSection(BaseModel):
    P: list[Matrix] = Field(description="Terminal shape blocks P_{f,i}")
    K: list[Matrix] = Field(description="Terminal gains K_{f,i}")
    alpha_bar: float = Field(gt=0.0)
    alpha0: list[float]


class ArtifactFile(BaseModel):
    tube: TubeSection
    tightened: TightenedSection
    terminal: TerminalSection


def _matrix(a: np.ndarray) -> Matrix:
    return np.atleast_2d(a).tolist()


def _finite(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _nan(value: Optional[float]) -> float:
    return float("nan") if value is None else value


def artifacts_to_file(artifacts: SafetyArtifacts) -> ArtifactFile:
    tube, tightened, terminal = artifacts.tube, artifacts.tightened, artifacts.terminal
    return ArtifactFile(
        tube=TubeSection(
            P=[_matrix(P) for P in tube.P_blocks],
            K=[_matrix(K) for K in tube.gains],
            tau=_finite(tube.tau),
            tau_local=tube.tau_local.tolist(),
            objective=_finite(tube.objective),
        ),
        tightened=TightenedSection(
            X=[PolytopeFile(H=_matrix(p.H), h=p.h.tolist()) for p in tightened.X_bar],
            U=[PolytopeFile(H=_matrix(p.H), h=p.h.tolist()) for p in tightened.U_bar],
        ),
        terminal=TerminalSection(
            P=[_matrix(P) for P in terminal.P_blocks],
            K=[_matrix(K) for K in terminal.gains],
            alpha_bar=terminal.alpha_bar,
            alpha0=terminal.alpha0.tolist(),
        ),
    )


def artifacts_from_file(model: NetworkModel, data: ArtifactFile) -> SafetyArtifacts:
    if len(data.tube.P) != model.M or len(data.terminal.P) != model.M:
        raise ValueError(
            f"artifact file describes {len(data.tube.P)} subsystems, model has {model.M}"
        )
    tube = StructuredTube.from_blocks(
        model,
        [np.array(P) for P in data.tube.P],
        [np.array(K) for K in data.tube.K],
        tau=_nan(data.tube.tau),
        tau_local=np.array(data.tube.tau_local),
        objective=_nan(data.tube.objective),
    )
    X_bar = [Polytope(np.array(p.H), np.array(p.h)) for p in data.tightened.X]
    U_bar = [Polytope(np.array(p.H), np.array(p.h)) for p in data.tightened.U]
    tightened = TightenedConstraints(
        X_bar=X_bar,
        U_bar=U_bar,
        state_support=[sub.X.h - p.h for sub, p in zip(model.subsystems, X_bar)],
        input_support=[sub.U.h - p.h for sub, p in zip(model.subsystems, U_bar)],
    )
    terminal = TerminalIngredients.from_blocks(
        model,
        [np.array(P) for P in data.terminal.P],
        [np.array(K) for K in data.terminal.K],
        alpha_bar=data.terminal.alpha_bar,
        alpha0=np.array(data.terminal.alpha0),
    )
    return SafetyArtifacts(tube=tube, tightened=tightened, terminal=terminal)


def save_artifacts(artifacts: SafetyArtifacts, path: str | Path) -> None:
    Path(path).write_text(artifacts_to_file(artifacts).model_dump_json(indent=2), encoding="utf-8")
    logger.info("Artifacts written", path=str(path))


def load_artifacts(model: NetworkModel, path: str | Path) -> SafetyArtifacts:
    data = ArtifactFile.model_validate_json(Path(path).read_text(encoding="utf-8"))
    return artifacts_from_file(model, data)
