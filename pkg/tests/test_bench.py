"""
Tests for disturbances, stage costs, surrogate policies, traces and controller comparisons.
"""

import numpy as np
import orjson
import pytest

from src.bench import (
    LinearFeedbackPolicy,
    NominalMpcPolicy,
    PolicySpec,
    compare_controllers,
    demo_initial_state,
    make_policy,
    neighborhood_dynamics,
    sample_disturbance,
    sample_global_disturbance,
    sample_initial_state,
    simulate,
    stage_cost,
    stage_costs,
    state_weight,
    synthesize_policy_gains,
)
from src.certifier import MissingArtifactsError
from src.netmodel import ChainBounds, DimensionError, Ellipsoid, build_chain_benchmark
from tests.conftest import scalar_model


def zero_policy(model):
    return make_policy(PolicySpec(kind="zero"), model)


class TestCosts:
    """Tests for the local stage costs."""

    def test_stage_cost_values(self):
        """Test the state and input weights of a single stage cost."""
        assert stage_cost([1.0], [0.0]) == pytest.approx(0.5)
        assert stage_cost([0.0], [1.0]) == pytest.approx(1.0)
        assert stage_cost([1.0, 1.0], [2.0]) == pytest.approx(5.0)

    def test_stage_costs_per_subsystem(self, chain3):
        """Test that the global cost splits into neighborhood costs."""
        x = np.arange(chain3.n, dtype=float) / 10.0
        u = np.ones(chain3.m)
        costs = stage_costs(chain3, x, u)
        assert costs.shape == (3,)
        expected = 0.5 * chain3.neighborhood(x, 1) @ chain3.neighborhood(x, 1) + 1.0
        assert costs[1] == pytest.approx(expected)

    def test_state_weight_quadratic_form(self, chain3, rng):
        """Test that x' Q x equals the sum of squared neighborhood norms."""
        Q = state_weight(chain3)
        x = rng.standard_normal(chain3.n)
        total = sum(chain3.neighborhood(x, i) @ chain3.neighborhood(x, i) for i in range(chain3.M))
        assert x @ Q @ x == pytest.approx(total)

    def test_dimension_mismatch(self, chain3):
        """Test that wrongly sized vectors are rejected."""
        with pytest.raises(DimensionError):
            stage_costs(chain3, np.zeros(2), np.zeros(chain3.m))


class TestDisturbance:
    """Tests for disturbance sampling."""

    def test_local_draw(self, rng):
        """Test a single local draw inside and on the boundary of its ellipsoid."""
        W = Ellipsoid(np.diag([4.0, 1.0]), 0.5)
        inside = sample_disturbance(W, rng)
        surface = sample_disturbance(W, rng, boundary=True)
        assert inside.shape == (2,)
        assert inside @ W.Q @ inside <= 0.5 + 1e-12
        assert surface @ W.Q @ surface == pytest.approx(0.5)

    def test_zero_level(self, rng):
        """Test that a zero disturbance level only yields zeros."""
        model = scalar_model(q=0.0)
        assert np.all(sample_global_disturbance(model, rng) == 0.0)

    def test_samples_inside_sets(self, benchmark, rng):
        """Test that many global draws respect every local ellipsoid."""
        for _ in range(200):
            w = sample_global_disturbance(benchmark, rng)
            assert w.shape == (benchmark.p,)
            for i, sub in enumerate(benchmark.subsystems):
                w_i = w[benchmark.disturbance_slice(i)]
                assert w_i @ sub.W.Q @ w_i <= sub.W.q + 1e-12

    def test_boundary_samples(self, benchmark, rng):
        """Test that boundary draws lie on every local surface."""
        w = sample_global_disturbance(benchmark, rng, boundary=True)
        for i, sub in enumerate(benchmark.subsystems):
            w_i = w[benchmark.disturbance_slice(i)]
            assert w_i @ sub.W.Q @ w_i == pytest.approx(sub.W.q)

    @pytest.mark.slow
    def test_bound_over_many_samples(self, rng):
        """Test the benchmark disturbance bound over 1e5 draws."""
        model = scalar_model(q=1.1e-3)
        samples = np.array([sample_global_disturbance(model, rng)[0] for _ in range(100_000)])
        assert np.max(samples**2) <= 1.1e-3 + 1e-12


class TestPolicies:
    """Tests for the surrogate policies."""

    def test_zero_policy(self, chain3):
        """Test that the zero policy proposes nothing."""
        policy = zero_policy(chain3)
        assert np.all(policy(np.ones(chain3.n), 0) == 0.0)
        assert policy.name == "zero"

    def test_linear_policy_reads_neighborhood_only(self, chain3):
        """Test that u_0 does not depend on the state of subsystem 2."""
        gains = [np.ones((1, chain3.neighborhood_dim(i))) for i in range(chain3.M)]
        policy = make_policy(PolicySpec(kind="linear-feedback", gains=[K.tolist() for K in gains]), chain3)
        assert isinstance(policy, LinearFeedbackPolicy)
        x = np.zeros(chain3.n)
        base = policy(x, 0)
        x[chain3.state_slice(2)] = 1.0
        moved = policy(x, 0)
        assert moved[0] == base[0]
        assert moved[1] != base[1]

    def test_gain_count_mismatch(self, chain3):
        """Test that one gain per subsystem is required."""
        spec = PolicySpec(kind="linear-feedback", gains=[[[1.0, 0.0, 0.0, 0.0]]])
        with pytest.raises(ValueError):
            make_policy(spec, chain3)

    def test_external_requires_callback(self):
        """Test that an external policy without callback is rejected."""
        with pytest.raises(ValueError):
            PolicySpec(kind="external")

    def test_external_policy(self, chain3):
        """Test that an external callback sees neighborhood states."""
        seen = []

        def law(i, x_N, t):
            seen.append((i, x_N.size))
            return np.array([float(t)])

        policy = make_policy(PolicySpec(kind="external", callback=law), chain3)
        assert np.allclose(policy(np.zeros(chain3.n), 3), 3.0)
        assert seen == [(0, 4), (1, 6), (2, 4)]

    def test_synthesized_gains_stabilize(self, chain3):
        """Test that synthesized gains make the undisturbed chain stable."""
        gains = synthesize_policy_gains(chain3)
        K = chain3.lift_gains(gains)
        mats = chain3.global_matrices
        assert np.max(np.abs(np.linalg.eigvals(mats.A + mats.B @ K))) < 1.0

    def test_nominal_mpc_matches_lq_inside(self, chain3, rng):
        """Test that nominal MPC equals the unconstrained LQ input deep inside the constraints."""
        policy = NominalMpcPolicy(chain3, horizon=5)
        x = 1e-2 * rng.standard_normal(chain3.n)
        assert np.allclose(policy(x, 0), policy.lq_gain @ x, atol=1e-6)
        assert policy.infeasible_steps == 0

    def test_nominal_mpc_infeasible_uses_lq(self, chain3):
        """Test that an infeasible nominal program falls back to the LQ input."""
        policy = NominalMpcPolicy(chain3, horizon=3)
        x = np.full(chain3.n, 5.0)
        assert np.allclose(policy(x, 0), policy.lq_gain @ x)
        assert policy.infeasible_steps == 1

    def test_nominal_mpc_reads_neighborhood_only(self, chain3, rng):
        """Test that the first agent's nominal MPC input ignores the state of subsystem 2."""
        policy = NominalMpcPolicy(chain3, horizon=5)
        x = 0.05 * rng.standard_normal(chain3.n)
        base = policy(x, 0)
        x[chain3.state_slice(2)] += 0.1
        moved = policy(x, 0)
        assert np.allclose(moved[chain3.input_slice(0)], base[chain3.input_slice(0)], rtol=0.0, atol=1e-12)
        assert not np.allclose(moved[chain3.input_slice(1)], base[chain3.input_slice(1)], atol=1e-9)

    def test_neighborhood_dynamics(self, chain3):
        """Test the local models: full for the middle mass, truncated at the chain end."""
        mats = chain3.global_matrices
        A_mid, B_mid = neighborhood_dynamics(chain3, 1)
        assert np.allclose(A_mid, mats.A)
        assert np.allclose(B_mid, mats.B)
        A_end, B_end = neighborhood_dynamics(chain3, 0)
        assert A_end.shape == (4, 4)
        assert B_end.shape == (4, 2)
        assert np.allclose(A_end, mats.A[:4, :4])

    def test_artifacts_of_other_network_rejected(self, chain3_artifacts):
        """Test that a policy cannot be built against artifacts for another network."""
        model = build_chain_benchmark(M=4)
        with pytest.raises(MissingArtifactsError):
            make_policy(PolicySpec(kind="zero"), model, chain3_artifacts)

    def test_matching_artifacts_accepted(self, chain3, chain3_artifacts):
        """Test that artifacts synthesized for the same network are accepted."""
        policy = make_policy(PolicySpec(kind="zero"), chain3, chain3_artifacts)
        assert np.all(policy(np.zeros(chain3.n), 0) == 0.0)


class TestTrace:
    """Tests for run traces and their outputs."""

    def test_raw_trace_cost_recomputed(self, chain3):
        """Test that the trace cost equals the stage costs of the stored states and inputs."""
        gains = [0.1 * np.ones((1, chain3.neighborhood_dim(i))) for i in range(chain3.M)]
        policy = LinearFeedbackPolicy(chain3, gains)
        x0 = demo_initial_state(chain3, position=-0.05, velocity=0.1)
        trace = simulate(chain3, None, policy, "raw", T=5, seed=3, x0=x0)
        assert trace.steps == 5
        assert trace.states.shape == (6, chain3.n)
        recomputed = sum(
            np.sum(stage_costs(chain3, x, u)) for x, u in zip(trace.states[:-1], trace.inputs)
        )
        assert trace.total_cost == pytest.approx(recomputed)
        assert np.allclose(trace.inputs, trace.proposals)

    def test_same_seed_same_trace(self, chain3):
        """Test that a seed fixes the disturbance sequence."""
        policy = zero_policy(chain3)
        first = simulate(chain3, None, policy, "raw", T=4, seed=11, x0=np.zeros(chain3.n))
        second = simulate(chain3, None, policy, "raw", T=4, seed=11, x0=np.zeros(chain3.n))
        other = simulate(chain3, None, policy, "raw", T=4, seed=12, x0=np.zeros(chain3.n))
        assert np.array_equal(first.states, second.states)
        assert not np.array_equal(first.states, other.states)

    def test_write_outputs(self, chain3, tmp_path):
        """Test the CSV rows per (t, subsystem) and the JSON summary."""
        trace = simulate(chain3, None, zero_policy(chain3), "raw", T=3, x0=np.zeros(chain3.n))
        out = trace.write(tmp_path / "run")
        lines = (out / "trace.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1 + 3 * chain3.M
        assert lines[0].startswith("t,subsystem,state_0,state_1")
        summary = orjson.loads((out / "summary.json").read_bytes())
        assert summary["controller"] == "raw"
        assert summary["steps"] == 3
        assert summary["max_beta_sum"] is None

    def test_certified_summary(self, chain3, chain3_artifacts):
        """Test that a certified run reports budgets and no violations."""
        trace = simulate(
            chain3, chain3_artifacts, zero_policy(chain3), "certified", T=3, x0=np.zeros(chain3.n), horizon=5
        )
        summary = trace.summary()
        assert summary.state_violations == 0
        assert summary.statuses == {"feasible": 3}
        assert summary.max_beta_sum <= 1.0 + 1e-6
        assert summary.modified_steps == 0


class TestInitialStates:
    """Tests for comparison initial states."""

    def test_positions_inside_fraction(self, benchmark, rng):
        """Test that sampled positions respect the scaled bounds and velocities are zero."""
        bounds = ChainBounds()
        for _ in range(50):
            x = sample_initial_state(benchmark, rng, bounds, fraction=0.5)
            positions, velocities = x[0::2], x[1::2]
            assert np.all(velocities == 0.0)
            assert np.all(positions >= -0.5 * bounds.position)
            assert positions[1] <= 0.5 * bounds.tight_upper
            assert np.all(positions <= 0.5 * bounds.position)


@pytest.fixture(scope="module")
def benchmark_policy(benchmark):
    """Synthesized linear-feedback policy of the nine-mass chain."""
    return make_policy(PolicySpec(kind="linear-feedback"), benchmark)


@pytest.mark.slow
class TestBenchmarkClosedLoop:
    """Closed-loop runs on the nine-mass chain."""

    def test_raw_violates_certified_safe(self, benchmark, benchmark_artifacts, benchmark_policy):
        """Test that the filtered linear policy stays safe where the raw policy does not."""
        raw = simulate(benchmark, benchmark_artifacts, benchmark_policy, "raw", seed=0)
        certified = simulate(benchmark, benchmark_artifacts, benchmark_policy, "certified", seed=0)
        assert raw.state_violations() > 0
        assert certified.state_violations() == 0
        assert certified.input_violations() == 0
        assert certified.fallbacks == 0
        assert np.all(certified.beta_sums <= 1.0 + 1e-6)

    def test_far_subsystems_unmodified(self, benchmark, benchmark_artifacts, benchmark_policy):
        """Test that masses far from the tight bound apply their proposals unchanged."""
        trace = simulate(benchmark, benchmark_artifacts, benchmark_policy, "certified", seed=0)
        for i in (7, 8):
            inputs = trace.inputs[:, benchmark.input_slice(i)]
            proposals = trace.proposals[:, benchmark.input_slice(i)]
            assert np.allclose(inputs, proposals, rtol=0.0, atol=1e-5)
        near = trace.inputs[:, benchmark.input_slice(1)] - trace.proposals[:, benchmark.input_slice(1)]
        assert np.max(np.abs(near)) > 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_certified_seeds(self, benchmark, benchmark_artifacts, benchmark_policy, seed):
        """Test feasibility, budgets and levels of certified runs over twenty disturbance seeds."""
        trace = simulate(benchmark, benchmark_artifacts, benchmark_policy, "certified", seed=seed)
        assert set(trace.statuses) == {"feasible"}
        assert trace.fallbacks == 0
        assert trace.state_violations() == 0
        assert np.all(trace.beta_sums <= 1.0 + 1e-6)
        assert np.all(trace.alpha_sums <= benchmark_artifacts.terminal.alpha_bar + 1e-6)

    def test_compare_controllers(self, benchmark, benchmark_artifacts):
        """Test the comparison summary and its reproducibility."""
        kwargs = dict(T=5, n_runs=2, seed=4, horizon=5, workers=1, progress=False)
        first = compare_controllers(benchmark, benchmark_artifacts, **kwargs)
        second = compare_controllers(benchmark, benchmark_artifacts, **kwargs)
        assert set(first.variants) == {"DMPSC 1", "DMPSC 2", "RDMPC"}
        for name, variant in first.variants.items():
            assert len(variant.costs) == 2
            assert variant.state_violations == 0
            assert variant.quartiles[0] <= variant.median_cost <= variant.quartiles[2]
            assert variant.costs == pytest.approx(second.variants[name].costs, rel=1e-12)
        assert first.initial_states == second.initial_states

    def test_certified_variants_cheaper_than_rdmpc(self, benchmark, benchmark_artifacts):
        """Test the cost and solver-time ordering of the comparison on a fixed-seed batch."""
        summary = compare_controllers(
            benchmark, benchmark_artifacts, T=20, n_runs=6, seed=7, horizon=10, workers=1, progress=False
        )
        rdmpc = summary.variants["RDMPC"]
        assert summary.variants["DMPSC 1"].median_cost < rdmpc.median_cost
        assert summary.variants["DMPSC 2"].median_cost < rdmpc.median_cost
        assert summary.variants["DMPSC 1"].median_solve_ms < rdmpc.median_solve_ms
