"""Online safety certification: program, budget negotiation and session bookkeeping."""

from src.certifier.certify import (
    CertificationInfeasible,
    CertRequest,
    CertResult,
    SafetyCertifier,
    build_program,
    certify,
    fallback_result,
    passthrough_feasible,
)
from src.certifier.negotiation import NegotiationRows, negotiation_rows
from src.certifier.program import (
    AgentBlock,
    AgentParameters,
    ConstraintRecord,
    DmpscProgram,
    HorizonMismatchError,
    MissingArtifactsError,
    ObjectiveKind,
    ProgramSolution,
    agent_constraints,
    agent_objective,
    psd_factor,
)
from src.certifier.session import (
    Candidate,
    CertSession,
    ProgramCache,
    SafeSetError,
    SessionIntegrityError,
    advance_session,
    init_session,
    is_feasible,
    shift_candidate,
)

__all__ = [
    "AgentBlock",
    "AgentParameters",
    "Candidate",
    "CertRequest",
    "CertResult",
    "CertSession",
    "CertificationInfeasible",
    "ConstraintRecord",
    "DmpscProgram",
    "HorizonMismatchError",
    "MissingArtifactsError",
    "NegotiationRows",
    "ObjectiveKind",
    "ProgramCache",
    "ProgramSolution",
    "SafeSetError",
    "SafetyCertifier",
    "SessionIntegrityError",
    "advance_session",
    "agent_constraints",
    "agent_objective",
    "build_program",
    "certify",
    "fallback_result",
    "init_session",
    "is_feasible",
    "negotiation_rows",
    "passthrough_feasible",
    "psd_factor",
    "shift_candidate",
]
