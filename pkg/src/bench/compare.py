"""Closed-loop cost and solver-time comparison of DMPSC variants and the RDMPC baseline."""

from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel
from tqdm import tqdm

from src.bench.policies import PolicySpec, make_policy, synthesize_policy_gains
from src.bench.simulate import simulate
from src.certifier import SafetyCertifier
from src.core.config import settings
from src.netmodel import ChainBounds, NetworkModel

logger = structlog.get_logger(__name__)

VARIANTS = ("DMPSC 1", "DMPSC 2", "RDMPC")
MAX_DRAWS = 50


class VariantSummary(BaseModel):
    costs: list[float]
    solve_ms: list[float]
    quartiles: list[float]
    median_cost: float
    median_solve_ms: float
    state_violations: int
    fallbacks: int


class ComparisonSummary(BaseModel):
    runs: int
    steps: int
    horizon: int
    seed: int
    initial_states: list[list[float]]
    variants: dict[str, VariantSummary]


def sample_initial_state(
    model: NetworkModel,
    rng: np.random.Generator,
    bounds: Optional[ChainBounds] = None,
    fraction: float = 0.6,
) -> np.ndarray:
    """Chain positions uniform in ``fraction`` of the position box, velocities zero."""
    bounds = bounds or ChainBounds()
    x = np.zeros(model.n)
    for i in range(model.M):
        upper = bounds.tight_upper if i == bounds.tight_subsystem else bounds.position
        x[int(model.state_offsets[i])] = rng.uniform(-fraction * bounds.position, fraction * upper)
    return x


def _draw_feasible(
    model: NetworkModel,
    artifacts,
    rng: np.random.Generator,
    horizon: int,
    bounds: Optional[ChainBounds],
) -> np.ndarray:
    certifier = SafetyCertifier(model, artifacts, horizon=horizon)
    for _ in range(MAX_DRAWS):
        x0 = sample_initial_state(model, rng, bounds)
        if certifier.is_feasible(x0):
            return x0
    raise RuntimeError(f"no feasible initial state in {MAX_DRAWS} draws")


def _run(
    model: NetworkModel,
    artifacts,
    gains: list[np.ndarray],
    x0: np.ndarray,
    run_seed: int,
    T: int,
    horizon: int,
):
    """All three variants from one initial state under one disturbance sequence."""
    linear = make_policy(PolicySpec(kind="linear-feedback", gains=[K.tolist() for K in gains]), model)
    nominal = make_policy(PolicySpec(kind="nominal-dmpc", horizon=horizon), model)
    zero = make_policy(PolicySpec(kind="zero"), model)
    return {
        "DMPSC 1": simulate(model, artifacts, linear, "certified", T, run_seed, x0=x0, horizon=horizon),
        "DMPSC 2": simulate(model, artifacts, nominal, "certified", T, run_seed, x0=x0, horizon=horizon),
        "RDMPC": simulate(model, artifacts, zero, "rdmpc", T, run_seed, x0=x0, horizon=horizon),
    }


def compare_controllers(
    model: NetworkModel,
    artifacts,
    T: Optional[int] = None,
    n_runs: Optional[int] = None,
    seed: int = 0,
    horizon: Optional[int] = None,
    bounds: Optional[ChainBounds] = None,
    workers: Optional[int] = None,
    progress: bool = True,
) -> ComparisonSummary:
    """
    Accumulated closed-loop costs and solver times of DMPSC 1 (linear policy,
    certified), DMPSC 2 (nominal MPC policy, certified) and RDMPC.

    Initial states are drawn up front from ``seed`` and rejected until
    certifiable; each run then uses its own disturbance seed shared by the
    three variants.
    """
    T = settings.sim_steps if T is None else T
    n_runs = settings.bench_runs if n_runs is None else n_runs
    horizon = settings.horizon if horizon is None else horizon
    workers = settings.bench_workers if workers is None else workers

    rng = np.random.default_rng(seed)
    initial_states = [_draw_feasible(model, artifacts, rng, horizon, bounds) for _ in range(n_runs)]
    run_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_runs)]
    gains = synthesize_policy_gains(model)

    jobs = list(zip(initial_states, run_seeds))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_run, model, artifacts, gains, x0, s, T, horizon) for x0, s in jobs]
        results = [f.result() for f in tqdm(futures, desc="runs", disable=not progress)]

    variants = {}
    for name in VARIANTS:
        traces = [r[name] for r in results]
        costs = [t.total_cost for t in traces]
        solve_ms = [float(np.median([rec.solve_ms for rec in t.records])) if t.records else 0.0 for t in traces]
        variants[name] = VariantSummary(
            costs=costs,
            solve_ms=solve_ms,
            quartiles=[float(q) for q in np.percentile(costs, [25, 50, 75])] if costs else [],
            median_cost=float(np.median(costs)) if costs else 0.0,
            median_solve_ms=float(np.median(solve_ms)) if solve_ms else 0.0,
            state_violations=sum(t.state_violations() for t in traces),
            fallbacks=sum(t.fallbacks for t in traces),
        )
        logger.info(
            "Variant summary",
            variant=name,
            median_cost=variants[name].median_cost,
            median_solve_ms=variants[name].median_solve_ms,
        )
    return ComparisonSummary(
        runs=n_runs,
        steps=T,
        horizon=horizon,
        seed=seed,
        initial_states=[x.tolist() for x in initial_states],
        variants=variants,
    )
