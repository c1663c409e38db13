"""Splitting the online program into agent subproblems and the consensus edge map."""

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import structlog

from src.certifier.program import DmpscProgram
from src.distsolve.agents import ConsensusAgent
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)


class PartitionError(ValueError):
    """Raised when a constraint couples non-neighbors or the split loses constraints."""
    pass


@dataclass(frozen=True)
class SharedSymbol:
    """Value owned by ``owner`` with a local copy held by ``holder``."""

    owner: int
    holder: int
    kind: str  # "z" (one prediction step) or "delta_beta"
    step: int


@dataclass(frozen=True, eq=False)
class EdgeMap:
    edges: tuple[tuple[int, int], ...]  # undirected, i < j
    symbols: tuple[SharedSymbol, ...]

    def for_edge(self, i: int, j: int) -> list[SharedSymbol]:
        pair = {i, j}
        return [s for s in self.symbols if {s.owner, s.holder} == pair]

    def holders_of(self, owner: int) -> list[int]:
        return sorted({s.holder for s in self.symbols if s.owner == owner})


@dataclass(eq=False)
class Partition:
    agents: list[ConsensusAgent]
    edge_map: EdgeMap

    def __iter__(self) -> Iterator[ConsensusAgent]:
        return iter(self.agents)

    def bind_from(self, program: DmpscProgram) -> None:
        """Copy the parameter values of the centralized program into the agents."""
        model = program.model
        x = np.asarray(program.x.value, dtype=float)
        u_L = np.asarray(program.u_L.value, dtype=float)
        for agent in self.agents:
            i = agent.index
            agent.bind(
                model.neighborhood(x, i),
                u_L[model.input_slice(i)],
                float(program.beta.value[i]),
                float(program.alpha.value[i]),
            )

    def reset(self, model: NetworkModel) -> None:
        for agent in self.agents:
            agent.reset(model)


def _signature(record) -> tuple:
    return (*record.key, tuple(record.constraint.shape))


def check_locality(program: DmpscProgram) -> None:
    """Every constraint may only reference variables of its owner's neighborhood."""
    model = program.model
    owner_of = {}
    for b in program.blocks:
        for var in (b.z, b.v, b.u_tilde, b.beta_tilde, b.delta_beta):
            owner_of[var.id] = b.index
    for record in program.records:
        allowed = set(model.subsystems[record.owner].neighbors)
        for var in record.constraint.variables():
            j = owner_of.get(var.id)
            if j is None or j not in allowed:
                raise PartitionError(
                    f"constraint {record.key} of agent {record.owner} references variable "
                    f"{var.name()} outside its neighborhood"
                )


def partition_program(program: DmpscProgram, model: NetworkModel) -> Partition:
    """
    One ConsensusAgent per subsystem plus the map of shared symbols.

    Raises:
        PartitionError: If a constraint couples non-neighbors or the agents'
            constraints do not reassemble the centralized program
    """
    if program.model is not model:
        raise PartitionError("program was built for a different model")
    check_locality(program)

    agents = [
        ConsensusAgent(
            model,
            program.artifacts,
            program.rows,
            program.horizon,
            i,
            objective=program.objective_kind,
            pin_input=program.pin_input,
        )
        for i in range(model.M)
    ]

    central = sorted(_signature(r) for r in program.records)
    local = sorted(_signature(r) for agent in agents for r in agent.records)
    if central != local:
        missing = set(central) - set(local)
        extra = set(local) - set(central)
        raise PartitionError(f"partition does not reassemble the program: missing {missing}, extra {extra}")

    edges = sorted({(min(i, j), max(i, j)) for i, N in enumerate(model.neighborhoods) for j in N if i != j})
    symbols = []
    for agent in agents:
        for owner in agent.others:
            symbols.extend(
                SharedSymbol(owner=owner, holder=agent.index, kind="z", step=k) for k in range(program.horizon)
            )
            symbols.append(SharedSymbol(owner=owner, holder=agent.index, kind="delta_beta", step=0))
    edge_map = EdgeMap(edges=tuple(edges), symbols=tuple(symbols))
    logger.debug("Program partitioned", agents=len(agents), edges=len(edges), shared=len(symbols))
    return Partition(agents=agents, edge_map=edge_map)
