"""
Consensus ADMM over the message bus.

Each round every agent solves its subproblem, sends copy + dual of each
neighbor-owned symbol to the owner, the owner averages all copies (its own
included) into the consensus value and sends it back, and every agent then
updates its scaled duals. Rounds are bulk-synchronous; local solves of a
round may run in worker threads.
"""

import asyncio
import math
import time
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import orjson
import structlog
from pydantic import BaseModel, Field

from src.certifier.program import DmpscProgram, ProgramSolution
from src.core.config import settings
from src.core.retry import RetryConfig
from src.distsolve.bus import MessageBus
from src.distsolve.partition import Partition, partition_program

logger = structlog.get_logger(__name__)


class ConsensusNotConverged(RuntimeError):
    """Raised when the residuals stay above tolerance after max_iter rounds."""

    def __init__(self, message: str, primal_residuals: list[float], dual_residuals: list[float]):
        super().__init__(message)
        self.primal_residuals = primal_residuals
        self.dual_residuals = dual_residuals


class ConsensusParams(BaseModel):
    """ADMM parameters; defaults come from settings."""

    rho: float = Field(default_factory=lambda: settings.admm_rho, gt=0.0)
    max_iter: int = Field(default_factory=lambda: settings.admm_max_iter, ge=1)
    tol: float = Field(default_factory=lambda: settings.admm_tol, gt=0.0)
    residual_balancing: bool = Field(default_factory=lambda: settings.admm_residual_balancing)
    parallel: bool = Field(default_factory=lambda: settings.admm_parallel)
    telemetry_path: Optional[str] = Field(default=None, description="Append per-iteration JSON lines here")


@dataclass
class ConsensusTelemetry:
    primal_residuals: list[float] = field(default_factory=list)
    dual_residuals: list[float] = field(default_factory=list)
    rho: list[float] = field(default_factory=list)
    messages: list[int] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.primal_residuals)

    def records(self) -> list[dict]:
        return [
            {
                "iteration": k + 1,
                "primal_residual": self.primal_residuals[k],
                "dual_residual": self.dual_residuals[k],
                "rho": self.rho[k],
                "messages": self.messages[k],
            }
            for k in range(self.iterations)
        ]

    def to_jsonl(self) -> bytes:
        return b"".join(orjson.dumps(r) + b"\n" for r in self.records())

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "ab") as fh:
            fh.write(self.to_jsonl())


@dataclass(eq=False)
class ConsensusResult:
    feasible: bool
    telemetry: ConsensusTelemetry
    infeasible_agent: Optional[int] = None


async def _solve_round(partition: Partition, rho: float, parallel: bool, config: RetryConfig):
    if parallel:
        return await asyncio.gather(
            *(asyncio.to_thread(agent.solve, rho, config) for agent in partition.agents)
        )
    return [agent.solve(rho, config) for agent in partition.agents]


def _exchange(partition: Partition, bus: MessageBus, iteration: int) -> float:
    """Copy/average/broadcast for one round; returns the squared change of the consensus values."""
    agents = partition.agents
    for agent in agents:
        for owner in agent.others:
            s = agent.state
            bus.send(iteration, agent.index, owner, "z", agent.local_z(owner) + s.dual_z[owner])
            bus.send(iteration, agent.index, owner, "delta_beta", agent.local_db(owner) + s.dual_db[owner])

    change: list[float] = []
    for agent in agents:
        if not agent.others:
            continue
        i, s = agent.index, agent.state
        z_sum = agent.local_z(i) + s.dual_z[i]
        db_sum = agent.local_db(i) + s.dual_db[i]
        for holder in agent.others:
            z_sum = z_sum + bus.receive(i, holder, "z")
            db_sum = db_sum + float(bus.receive(i, holder, "delta_beta"))
        count = len(agent.neighbors)
        zeta_z, zeta_db = z_sum / count, db_sum / count
        change += [count * d for d in ((zeta_z - s.zeta_z[i]) ** 2).ravel().tolist()]
        change.append(count * (zeta_db - s.zeta_db[i]) ** 2)
        s.zeta_z[i], s.zeta_db[i] = zeta_z, zeta_db
        for holder in agent.others:
            bus.send(iteration, i, holder, "zeta_z", zeta_z)
            bus.send(iteration, i, holder, "zeta_db", zeta_db)

    for agent in agents:
        for owner in agent.others:
            agent.state.zeta_z[owner] = bus.receive(agent.index, owner, "zeta_z")
            agent.state.zeta_db[owner] = float(bus.receive(agent.index, owner, "zeta_db"))
    return math.fsum(change)


def _primal(partition: Partition) -> tuple[float, float, float, int]:
    """
    Residual norm, norms of copies and consensus values, and symbol count.

    Sums are exactly rounded (``math.fsum``) and independent of agent order.
    """
    r_sq: list[float] = []
    x_sq: list[float] = []
    zeta_sq: list[float] = []
    count = 0
    for agent in sorted(partition.agents, key=lambda a: a.index):
        for j in agent.shared:
            local_z, zeta_z = agent.local_z(j), agent.state.zeta_z[j]
            local_db, zeta_db = agent.local_db(j), agent.state.zeta_db[j]
            r_sq += [*((local_z - zeta_z) ** 2).ravel().tolist(), (local_db - zeta_db) ** 2]
            x_sq += [*(local_z**2).ravel().tolist(), local_db**2]
            zeta_sq += [*(zeta_z**2).ravel().tolist(), zeta_db**2]
            count += local_z.size + 1
    return math.sqrt(math.fsum(r_sq)), math.sqrt(math.fsum(x_sq)), math.sqrt(math.fsum(zeta_sq)), count


async def arun_consensus(
    partition: Partition,
    bus: MessageBus,
    params: Optional[ConsensusParams] = None,
    config: Optional[RetryConfig] = None,
) -> ConsensusResult:
    """
    Run ADMM rounds until primal and dual residuals meet the tolerance.

    The stopping test uses absolute plus relative tolerances:
    r <= tol * (sqrt(p) + max(|x|, |zeta|)) and s <= tol * (sqrt(p) + rho |dual|).
    A locally infeasible agent makes the whole program infeasible.

    Raises:
        ConsensusNotConverged: If max_iter rounds pass without convergence
    """
    params = params or ConsensusParams()
    config = config or RetryConfig()
    telemetry = ConsensusTelemetry()
    rho = params.rho

    for iteration in range(1, params.max_iter + 1):
        outcomes = await _solve_round(partition, rho, params.parallel, config)
        for agent, outcome in zip(partition.agents, outcomes):
            if not outcome.ok:
                logger.info("Agent subproblem infeasible", agent=agent.index, iteration=iteration)
                return ConsensusResult(feasible=False, telemetry=telemetry, infeasible_agent=agent.index)

        sent_before = bus.message_count()
        change_sq = _exchange(partition, bus, iteration)
        primal, x_norm, zeta_norm, count = _primal(partition)
        dual = rho * np.sqrt(change_sq)
        for agent in partition.agents:
            agent.update_duals()

        telemetry.primal_residuals.append(float(primal))
        telemetry.dual_residuals.append(float(dual))
        telemetry.rho.append(float(rho))
        telemetry.messages.append(bus.message_count() - sent_before)

        dual_norm = math.sqrt(
            math.fsum(
                math.fsum((a.state.dual_z[j] ** 2).ravel().tolist()) + a.state.dual_db[j] ** 2
                for a in partition.agents
                for j in a.shared
            )
        )
        eps_primal = params.tol * (np.sqrt(count) + max(x_norm, zeta_norm))
        eps_dual = params.tol * (np.sqrt(count) + rho * dual_norm)
        if primal <= eps_primal and dual <= eps_dual:
            telemetry.converged = True
            logger.debug("Consensus converged", iterations=iteration, primal=primal, dual=dual)
            return ConsensusResult(feasible=True, telemetry=telemetry)

        if params.residual_balancing:
            if primal > 10.0 * dual:
                rho, factor = 2.0 * rho, 0.5
            elif dual > 10.0 * primal:
                rho, factor = 0.5 * rho, 2.0
            else:
                factor = 1.0
            if factor != 1.0:
                for agent in partition.agents:
                    agent.rescale_duals(factor)

    logger.warning(
        "Consensus not converged",
        iterations=params.max_iter,
        primal=telemetry.primal_residuals[-1],
        dual=telemetry.dual_residuals[-1],
    )
    raise ConsensusNotConverged(
        f"consensus not converged after {params.max_iter} iterations "
        f"(primal {telemetry.primal_residuals[-1]:.3e}, dual {telemetry.dual_residuals[-1]:.3e})",
        telemetry.primal_residuals,
        telemetry.dual_residuals,
    )


def run_consensus(
    partition: Partition,
    bus: MessageBus,
    params: Optional[ConsensusParams] = None,
    config: Optional[RetryConfig] = None,
) -> ConsensusResult:
    """Synchronous wrapper around ``arun_consensus``."""
    return asyncio.run(arun_consensus(partition, bus, params, config))


def assemble_solution(partition: Partition) -> ProgramSolution:
    """Global optimizer from the agents' own blocks."""
    agents = sorted(partition.agents, key=lambda a: a.index)
    return ProgramSolution(
        z=[np.asarray(a.block.z.value).reshape(a.horizon + 1, -1) for a in agents],
        v=[np.asarray(a.block.v.value).reshape(a.horizon, -1) for a in agents],
        u_tilde=np.concatenate([np.atleast_1d(a.block.u_tilde.value) for a in agents]),
        beta_tilde=np.array([float(a.block.beta_tilde.value) for a in agents]),
        delta_beta=np.array([float(a.block.delta_beta.value) for a in agents]),
        objective=float(sum(float(a.cost.value) for a in agents)),
    )


@dataclass(eq=False)
class DistributedOutcome:
    feasible: bool
    solution: Optional[ProgramSolution]
    telemetry: ConsensusTelemetry
    solve_ms: float
    bus: MessageBus

    def telemetry_summary(self) -> dict:
        return {
            "iterations": self.telemetry.iterations,
            "primal_residual": self.telemetry.primal_residuals[-1] if self.telemetry.iterations else 0.0,
            "dual_residual": self.telemetry.dual_residuals[-1] if self.telemetry.iterations else 0.0,
            "messages": int(sum(self.telemetry.messages)),
        }


_PARTITIONS: "weakref.WeakKeyDictionary[DmpscProgram, Partition]" = weakref.WeakKeyDictionary()


def solve_distributed(
    program: DmpscProgram,
    params: Optional[ConsensusParams] = None,
    config: Optional[RetryConfig] = None,
    telemetry_path: Optional[str | Path] = None,
) -> DistributedOutcome:
    """
    Solve a bound centralized program by consensus among its agents.

    The partition is built once per program and reused; consensus values and
    duals restart from zero on every call.

    Raises:
        ConsensusNotConverged: If consensus fails within max_iter rounds
    """
    partition = _PARTITIONS.get(program)
    if partition is None:
        partition = partition_program(program, program.model)
        _PARTITIONS[program] = partition
    partition.reset(program.model)
    partition.bind_from(program)
    bus = MessageBus(program.model.neighborhoods)

    started = time.perf_counter()
    result = run_consensus(partition, bus, params, config)
    solve_ms = 1e3 * (time.perf_counter() - started)
    if telemetry_path is None and params is not None:
        telemetry_path = params.telemetry_path
    if telemetry_path is not None:
        result.telemetry.write_jsonl(telemetry_path)
    return DistributedOutcome(
        feasible=result.feasible,
        solution=assemble_solution(partition) if result.feasible else None,
        telemetry=result.telemetry,
        solve_ms=solve_ms,
        bus=bus,
    )
