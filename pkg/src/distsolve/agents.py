"""Per-agent subproblems of the online program with consensus penalties."""

from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np
import structlog

from src.certifier.negotiation import NegotiationRows
from src.certifier.program import (
    AgentBlock,
    AgentParameters,
    ConstraintRecord,
    ObjectiveKind,
    agent_constraints,
    agent_objective,
)
from src.core.retry import RetryConfig, SolveOutcome, solve_with_fallback
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)


@dataclass
class AgentState:
    """
    Consensus bookkeeping of one agent, keyed by the owner of each shared symbol.

    ``zeta_*`` are the consensus values last received from the owners,
    ``dual_*`` the scaled dual variables of the local copies.
    """

    zeta_z: dict[int, np.ndarray] = field(default_factory=dict)
    zeta_db: dict[int, float] = field(default_factory=dict)
    dual_z: dict[int, np.ndarray] = field(default_factory=dict)
    dual_db: dict[int, float] = field(default_factory=dict)
    iteration: int = 0


class ConsensusAgent:
    """
    Agent i: its own block, copies of the neighbor trajectories z_j(0..N-1) and
    increments dbeta_j, and the penalty
    (rho/2) sum_j ||copy_j - zeta_j + dual_j||^2 over all shared symbols it holds
    (its own z_i(0..N-1) and dbeta_i included).
    """

    def __init__(
        self,
        model: NetworkModel,
        artifacts,
        rows: NegotiationRows,
        horizon: int,
        i: int,
        objective: ObjectiveKind = ObjectiveKind.CERTIFY,
        pin_input: bool = False,
    ):
        sub = model.subsystems[i]
        self.index = i
        self.horizon = horizon
        self.neighbors: tuple[int, ...] = sub.neighbors
        self.others: tuple[int, ...] = sub.others
        # own symbols take part in consensus only when some neighbor holds a copy
        self.shared: tuple[int, ...] = self.neighbors if self.others else ()
        self.block = AgentBlock.create(model, i, horizon)
        self.copies_z = {
            j: cp.Variable((horizon, model.subsystems[j].n), name=f"z_{j}@{i}") for j in self.others
        }
        self.copies_db = {j: cp.Variable(name=f"delta_beta_{j}@{i}") for j in self.others}

        self.x_neighborhood = cp.Parameter(model.neighborhood_dim(i), name=f"x_N{i}")
        self.u_L = cp.Parameter(sub.m, name=f"u_L_{i}")
        self.beta = cp.Parameter(nonneg=True, name=f"beta_{i}")
        self.alpha = cp.Parameter(nonneg=True, name=f"alpha_{i}")
        params = AgentParameters(
            x_neighborhood=self.x_neighborhood, u_L=self.u_L, beta=self.beta, alpha=self.alpha
        )

        self.records: list[ConstraintRecord] = agent_constraints(
            model, artifacts, rows, horizon, self.block, params, self._z_of, self._db_of, pin_input=pin_input
        )
        self.cost = agent_objective(
            model, artifacts, horizon, objective, self.block, params, self._z_of, pin_input=pin_input
        )

        # sqrt(rho/2) * shared - sqrt(rho/2) * (zeta - dual), kept DPP
        self.scale = cp.Parameter(nonneg=True, name=f"scale_{i}")
        self.target_z = {
            j: cp.Parameter((horizon, model.subsystems[j].n), name=f"target_z_{j}@{i}") for j in self.shared
        }
        self.target_db = {j: cp.Parameter(name=f"target_db_{j}@{i}") for j in self.shared}
        penalty = sum(
            cp.sum_squares(self.scale * self.shared_z(j) - self.target_z[j])
            + cp.square(self.scale * self.shared_db(j) - self.target_db[j])
            for j in self.shared
        )
        self.problem = cp.Problem(cp.Minimize(self.cost + penalty), [r.constraint for r in self.records])
        self.state = AgentState()
        self.reset(model)

    def _z_of(self, j: int) -> cp.Expression:
        return self.block.z if j == self.index else self.copies_z[j]

    def _db_of(self, j: int) -> cp.Expression:
        return self.block.delta_beta if j == self.index else self.copies_db[j]

    def shared_z(self, j: int) -> cp.Expression:
        return self.block.z[: self.horizon] if j == self.index else self.copies_z[j]

    def shared_db(self, j: int) -> cp.Expression:
        return self.block.delta_beta if j == self.index else self.copies_db[j]

    def reset(self, model: NetworkModel) -> None:
        self.state = AgentState(
            zeta_z={j: np.zeros((self.horizon, model.subsystems[j].n)) for j in self.shared},
            zeta_db={j: 0.0 for j in self.shared},
            dual_z={j: np.zeros((self.horizon, model.subsystems[j].n)) for j in self.shared},
            dual_db={j: 0.0 for j in self.shared},
        )

    def bind(self, x_neighborhood: np.ndarray, u_L: np.ndarray, beta: float, alpha: float) -> None:
        self.x_neighborhood.value = np.asarray(x_neighborhood, dtype=float)
        self.u_L.value = np.atleast_1d(np.asarray(u_L, dtype=float))
        self.beta.value = max(float(beta), 0.0)
        self.alpha.value = max(float(alpha), 0.0)

    def solve(self, rho: float, config: Optional[RetryConfig] = None) -> SolveOutcome:
        """Local minimization with the current consensus values and duals."""
        s = np.sqrt(rho / 2.0)
        self.scale.value = s
        for j in self.shared:
            self.target_z[j].value = s * (self.state.zeta_z[j] - self.state.dual_z[j])
            self.target_db[j].value = s * (self.state.zeta_db[j] - self.state.dual_db[j])
        return solve_with_fallback(self.problem, config)

    def local_z(self, j: int) -> np.ndarray:
        return np.asarray(self.shared_z(j).value).reshape(self.horizon, -1)

    def local_db(self, j: int) -> float:
        return float(self.shared_db(j).value)

    def update_duals(self) -> None:
        for j in self.shared:
            self.state.dual_z[j] = self.state.dual_z[j] + self.local_z(j) - self.state.zeta_z[j]
            self.state.dual_db[j] = self.state.dual_db[j] + self.local_db(j) - self.state.zeta_db[j]
        self.state.iteration += 1

    def rescale_duals(self, factor: float) -> None:
        """Scaled duals follow rho: u <- u * rho_old / rho_new."""
        for j in self.shared:
            self.state.dual_z[j] = factor * self.state.dual_z[j]
            self.state.dual_db[j] = factor * self.state.dual_db[j]
