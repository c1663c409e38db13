"""Admissibility checks for network models."""

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.netmodel.model import NetworkModel

logger = structlog.get_logger(__name__)


class ValidationReport(BaseModel):
    """Every violated model invariant; empty iff the model is admissible."""

    issues: list[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __contains__(self, fragment: str) -> bool:
        return any(fragment in issue for issue in self.issues)


class ModelValidator:
    """
    Checks a NetworkModel against the structural assumptions of the toolkit.

    Structural checks run first; graph and stabilizability checks are only
    meaningful (and only run) once dimensions are consistent.
    """

    UNSTABLE_MARGIN = 1e-9
    RANK_TOL = 1e-8

    @classmethod
    def validate(cls, model: NetworkModel) -> ValidationReport:
        issues = cls.check_structure(model)
        if not issues:
            issues += cls.check_graph(model)
            issues += cls.check_stabilizability(model)
        if issues:
            logger.debug("Model validation found issues", count=len(issues))
        return ValidationReport(issues=issues)

    @classmethod
    def check_structure(cls, model: NetworkModel) -> list[str]:
        issues: list[str] = []
        M = model.M
        for i, sub in enumerate(model.subsystems):
            tag = f"subsystem {i}"
            if i not in sub.neighbors:
                issues.append(f"{tag}: own index missing from neighborhood")
            outside = [j for j in sub.neighbors if not 0 <= j < M]
            if outside:
                issues.append(f"{tag}: neighbor indices out of range {outside}")
                continue
            stray = sorted(set(sub.A) - set(sub.neighbors))
            if stray:
                issues.append(f"{tag}: coupling outside neighborhood {stray}")
            for j, A_ij in sub.A.items():
                if 0 <= j < M and A_ij.shape != (sub.n, model[j].n):
                    issues.append(
                        f"{tag}: A[{j}] has shape {A_ij.shape}, expected {(sub.n, model[j].n)}"
                    )
            if sub.B.shape != (sub.n, sub.m):
                issues.append(f"{tag}: B has shape {sub.B.shape}, expected {(sub.n, sub.m)}")
            if sub.G.shape != (sub.n, sub.p):
                issues.append(f"{tag}: G has shape {sub.G.shape}, expected {(sub.n, sub.p)}")
            n_N = sum(model[j].n for j in sub.neighbors)
            if sub.X.dim != n_N:
                issues.append(f"{tag}: state constraints act on {sub.X.dim} states, neighborhood has {n_N}")
            if sub.U.dim != sub.m:
                issues.append(f"{tag}: input constraints act on {sub.U.dim} inputs, expected {sub.m}")
            if sub.W.dim != sub.p:
                issues.append(f"{tag}: disturbance set has dimension {sub.W.dim}, expected {sub.p}")
            issues += [f"{tag} state constraints: {msg}" for msg in sub.X.issues()]
            issues += [f"{tag} input constraints: {msg}" for msg in sub.U.issues()]
            issues += [f"{tag}: {msg}" for msg in sub.W.issues()]
        return issues

    @classmethod
    def check_graph(cls, model: NetworkModel) -> list[str]:
        issues = []
        for i, sub in enumerate(model.subsystems):
            for j in sub.others:
                if i not in model[j].neighbors:
                    issues.append(f"asymmetric neighborhood: {j} in N_{i} but {i} not in N_{j}")
        adjacency = np.zeros((model.M, model.M))
        for i, sub in enumerate(model.subsystems):
            adjacency[i, list(sub.neighbors)] = 1.0
        n_components, _ = connected_components(csr_matrix(adjacency), directed=False)
        if n_components > 1:
            issues.append(f"graph not connected ({n_components} components)")
        return issues

    @classmethod
    def check_stabilizability(cls, model: NetworkModel) -> list[str]:
        """PBH test on every eigenvalue with modulus >= 1."""
        mats = model.global_matrices
        n = model.n
        eigenvalues = np.linalg.eigvals(mats.A)
        for lam in eigenvalues[np.abs(eigenvalues) >= 1.0 - cls.UNSTABLE_MARGIN]:
            pbh = np.hstack([mats.A - lam * np.eye(n), mats.B])
            scale = max(1.0, np.linalg.norm(pbh, 2))
            if np.linalg.matrix_rank(pbh, tol=cls.RANK_TOL * scale) < n:
                return [f"(A, B) not stabilizable: uncontrollable mode {lam:.6g}"]
        return []


def validate(model: NetworkModel) -> ValidationReport:
    """Report every violated invariant of ``model``."""
    return ModelValidator.validate(model)
