"""Closed-loop experiments: disturbances, costs, policies, traces and comparisons."""

from src.bench.compare import (
    ComparisonSummary,
    VariantSummary,
    compare_controllers,
    sample_initial_state,
)
from src.bench.costs import stage_cost, stage_costs, state_weight
from src.bench.disturbance import sample_disturbance, sample_global_disturbance
from src.bench.policies import (
    LinearFeedbackPolicy,
    NeighborhoodPolicy,
    NominalMpcPolicy,
    PolicySpec,
    PolicySynthesisError,
    finite_horizon_lq_gain,
    make_policy,
    neighborhood_dynamics,
    synthesize_policy_gains,
)
from src.bench.simulate import demo_initial_state, simulate
from src.bench.trace import RunSummary, SimTrace

__all__ = [
    "ComparisonSummary",
    "LinearFeedbackPolicy",
    "NeighborhoodPolicy",
    "NominalMpcPolicy",
    "PolicySpec",
    "PolicySynthesisError",
    "RunSummary",
    "SimTrace",
    "VariantSummary",
    "compare_controllers",
    "demo_initial_state",
    "finite_horizon_lq_gain",
    "make_policy",
    "neighborhood_dynamics",
    "sample_disturbance",
    "sample_global_disturbance",
    "sample_initial_state",
    "simulate",
    "stage_cost",
    "stage_costs",
    "state_weight",
]
