"""Neighbor-only solution of the online program by consensus ADMM."""

from src.distsolve.agents import AgentState, ConsensusAgent
from src.distsolve.bus import ChannelError, Message, MessageBus
from src.distsolve.compare import ComparisonReport, compare_with_centralized
from src.distsolve.consensus import (
    ConsensusNotConverged,
    ConsensusParams,
    ConsensusResult,
    ConsensusTelemetry,
    DistributedOutcome,
    arun_consensus,
    assemble_solution,
    run_consensus,
    solve_distributed,
)
from src.distsolve.partition import (
    EdgeMap,
    Partition,
    PartitionError,
    SharedSymbol,
    check_locality,
    partition_program,
)

__all__ = [
    "AgentState",
    "ChannelError",
    "ComparisonReport",
    "ConsensusAgent",
    "ConsensusNotConverged",
    "ConsensusParams",
    "ConsensusResult",
    "ConsensusTelemetry",
    "DistributedOutcome",
    "EdgeMap",
    "Message",
    "MessageBus",
    "Partition",
    "PartitionError",
    "SharedSymbol",
    "arun_consensus",
    "assemble_solution",
    "check_locality",
    "compare_with_centralized",
    "partition_program",
    "run_consensus",
    "solve_distributed",
]
