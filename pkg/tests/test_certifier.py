"""
Tests for the online certifier: negotiation rows, program, sessions and certification.
"""

from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import null_space

from src.artifacts import synthesize_artifacts
from src.bench import PolicySpec, demo_initial_state, make_policy
from src.certifier import (
    CertificationInfeasible,
    CertRequest,
    DmpscProgram,
    HorizonMismatchError,
    MissingArtifactsError,
    ObjectiveKind,
    SafeSetError,
    SafetyCertifier,
    SessionIntegrityError,
    advance_session,
    build_program,
    certify,
    fallback_result,
    init_session,
    is_feasible,
    negotiation_rows,
    passthrough_feasible,
    psd_factor,
    shift_candidate,
)
from src.core.config import settings
from src.netmodel import step_truth
from src.netmodel.sets import sample_ellipsoid
from tests.conftest import scalar_model

HORIZON = 5


def star(M: int) -> list[tuple[int, ...]]:
    return [tuple(range(M))] + [(0, i) for i in range(1, M)]


def ring(M: int) -> list[tuple[int, ...]]:
    return [tuple(sorted({(i - 1) % M, i, (i + 1) % M})) for i in range(M)]


def random_graph(rng: np.random.Generator, M: int) -> list[tuple[int, ...]]:
    """Random spanning tree plus random extra edges."""
    adjacency = [{i} for i in range(M)]
    order = rng.permutation(M)
    for k in range(1, M):
        a, b = int(order[k]), int(order[rng.integers(k)])
        adjacency[a].add(b)
        adjacency[b].add(a)
    for _ in range(rng.integers(0, M)):
        a, b = (int(v) for v in rng.integers(M, size=2))
        adjacency[a].add(b)
        adjacency[b].add(a)
    return [tuple(sorted(s)) for s in adjacency]


@pytest.fixture(scope="module")
def scalar_artifacts():
    """Artifacts of the scalar subsystem."""
    model = scalar_model()
    return model, synthesize_artifacts(model, tau=0.5)


@pytest.fixture(scope="module")
def chain3_certifier(chain3, chain3_artifacts):
    """Certifier on the three-mass chain with a short horizon."""
    return SafetyCertifier(chain3, chain3_artifacts, horizon=HORIZON)


class TestNegotiationRows:
    """Tests for the zero-sum budget negotiation."""

    def test_star_graph(self):
        """Test that a five-node star only forces the hub increment and the leaf sum."""
        rows = negotiation_rows(star(5))
        basis = null_space(rows.constraint_matrix())
        assert basis.shape[1] == 3
        assert np.allclose(basis[0], 0.0)
        assert np.allclose(np.sum(basis[1:], axis=0), 0.0)
        assert rows.pinned == ()

    def test_ring_graph(self):
        """Test that a five-node ring forces every increment to zero."""
        rows = negotiation_rows(ring(5))
        assert null_space(rows.constraint_matrix()).shape[1] == 0

    def test_single_agent_pinned(self):
        """Test that a lone agent has no row and a pinned increment."""
        rows = negotiation_rows([(0,)])
        assert rows.matrix.shape == (0, 1)
        assert rows.owners == ()
        assert rows.pinned == (0,)
        assert rows.row_of(0) is None

    def test_chain_rows(self):
        """Test the row weights of a three-chain."""
        rows = negotiation_rows([(0, 1), (0, 1, 2), (1, 2)])
        assert np.allclose(rows.row_of(0), [0.0, 0.5, 0.0])
        assert np.allclose(rows.row_of(1), [1.0, 0.0, 1.0])
        assert np.allclose(rows.residual([1.0, 0.0, -1.0]), 0.0)

    def test_random_graphs_sum_to_zero(self):
        """Test that admissible increments sum to zero on random connected graphs."""
        rng = np.random.default_rng(7)
        for _ in range(100):
            M = int(rng.integers(3, 13))
            rows = negotiation_rows(random_graph(rng, M))
            basis = null_space(rows.constraint_matrix())
            for _ in range(3):
                delta = basis @ rng.standard_normal(basis.shape[1])
                assert abs(np.sum(delta)) <= 1e-9
                assert np.allclose(rows.residual(delta), 0.0, atol=1e-9)


class TestProgram:
    """Tests for the structure of the online program."""

    def test_psd_factor(self):
        """Test that the factor reproduces a singular PSD matrix."""
        P = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        L = psd_factor(P)
        assert L.shape == (2, 3)
        assert np.allclose(L.T @ L, P)

    def test_single_agent_records(self, scalar_artifacts):
        """Test that a single agent gets a pinned increment and no negotiation row."""
        model, artifacts = scalar_artifacts
        program = DmpscProgram(model, artifacts, horizon=1)
        keys = program.keys
        assert (0, "pin_increment", 0) in keys
        assert not any(tag == "negotiation" for _, tag, _ in keys)
        assert (0, "terminal", 1) in keys
        assert program.blocks[0].z.shape == (2, 1)
        assert program.blocks[0].v.shape == (1, 1)

    def test_single_agent_cannot_trade(self, scalar_artifacts):
        """Test that the lone increment stays zero."""
        model, artifacts = scalar_artifacts
        program = DmpscProgram(model, artifacts, horizon=1)
        program.bind([0.05], [0.0], [1.0], artifacts.terminal.alpha0)
        assert program.solve().ok
        assert abs(program.solution().delta_beta[0]) <= 1e-7

    def test_chain_records(self, chain3, chain3_artifacts):
        """Test that every chain agent owns a negotiation row and step-indexed records."""
        program = DmpscProgram(chain3, chain3_artifacts, horizon=HORIZON)
        for i in range(chain3.M):
            assert (i, "negotiation", 0) in program.keys
            assert (i, "pin_increment", 0) not in program.keys
            for k in range(HORIZON):
                assert {(i, "dynamics", k), (i, "state", k), (i, "input", k)} <= program.keys
        assert program.problem.is_dcp()
        assert program.problem.is_dpp()

    def test_pin_input_record(self, chain3, chain3_artifacts):
        """Test that pinning adds one input equality per agent."""
        program = DmpscProgram(chain3, chain3_artifacts, horizon=HORIZON, pin_input=True)
        assert all((i, "pin_input", 0) in program.keys for i in range(chain3.M))

    def test_missing_artifacts(self, chain3):
        """Test that a program needs artifacts."""
        with pytest.raises(MissingArtifactsError):
            DmpscProgram(chain3, None, horizon=HORIZON)

    def test_mismatched_artifacts(self, benchmark, chain3_artifacts):
        """Test that artifacts for another network are rejected."""
        with pytest.raises(MissingArtifactsError):
            DmpscProgram(benchmark, chain3_artifacts, horizon=HORIZON)

    def test_invalid_horizon(self, chain3, chain3_artifacts):
        """Test that a zero horizon is rejected."""
        with pytest.raises(HorizonMismatchError):
            DmpscProgram(chain3, chain3_artifacts, horizon=0)

    def test_bind_shape_check(self, chain3, chain3_artifacts):
        """Test that wrongly sized requests are rejected."""
        program = DmpscProgram(chain3, chain3_artifacts, horizon=HORIZON)
        with pytest.raises(ValueError):
            program.bind(np.zeros(2), np.zeros(chain3.m), np.ones(3) / 3, chain3_artifacts.terminal.alpha0)


class TestSession:
    """Tests for session start and advancement."""

    def test_origin_initializes(self, chain3, chain3_artifacts):
        """Test that the origin starts a session with uniform budgets."""
        session = init_session(chain3, chain3_artifacts, np.zeros(chain3.n), horizon=HORIZON)
        assert session.t == 0
        assert session.history == ()
        assert np.allclose(session.beta, 1.0 / 3.0)
        assert np.allclose(session.alpha, chain3_artifacts.terminal.alpha0)
        assert session.candidate is not None

    def test_benchmark_budgets_sum_to_one(self, benchmark, benchmark_artifacts):
        """Test that nine uniform budgets sum to one."""
        session = init_session(benchmark, benchmark_artifacts, np.zeros(benchmark.n), horizon=HORIZON)
        assert np.allclose(session.beta, 1.0 / 9.0)
        assert np.sum(session.beta) == pytest.approx(1.0)

    def test_demo_state_certifiable(self, benchmark, benchmark_artifacts):
        """Test that the mass moving toward its tight bound starts inside the safe set."""
        tight = benchmark_artifacts.tightened.X_bar[1]
        assert np.min(tight.h) >= (1.0 - settings.containment_fraction) * 0.1 - 1e-7
        certifier = SafetyCertifier(benchmark, benchmark_artifacts, horizon=10)
        assert certifier.is_feasible(demo_initial_state(benchmark))

    def test_far_state_rejected(self, chain3, chain3_artifacts):
        """Test that a state far outside the constraints is not in the safe set."""
        with pytest.raises(SafeSetError, match="outside implicit safe set"):
            init_session(chain3, chain3_artifacts, np.full(chain3.n, 5.0), horizon=HORIZON)

    def test_is_feasible(self, chain3, chain3_artifacts):
        """Test safe-set membership at the origin and far away."""
        assert is_feasible(chain3, chain3_artifacts, np.zeros(chain3.n), horizon=HORIZON)
        assert not is_feasible(chain3, chain3_artifacts, np.full(chain3.n, 5.0), horizon=HORIZON)

    def test_undisturbed_advance(self, chain3, chain3_certifier):
        """Test budgets, levels and candidate after an undisturbed step."""
        x0 = np.zeros(chain3.n)
        session = chain3_certifier.start(x0)
        result = chain3_certifier.certify(session, x0, np.zeros(chain3.m))
        x1 = step_truth(chain3, x0, result.u_cert, np.zeros(chain3.p))
        nxt = chain3_certifier.advance(session, x1, result)
        assert nxt.t == 1
        assert nxt.history == ("feasible",)
        assert np.sum(nxt.beta) <= 1.0 + 1e-7
        assert np.all(nxt.alpha >= 0.0)
        assert np.sum(nxt.alpha) <= np.sum(session.alpha) + 1e-7
        assert nxt.candidate.z[0].shape == (HORIZON + 1, 2)
        assert nxt.candidate.v[0].shape == (HORIZON, 1)

    def test_shift_appends_terminal_law(self, chain3, chain3_artifacts, chain3_certifier):
        """Test that the shifted candidate ends with the terminal controller step."""
        x0 = np.zeros(chain3.n)
        x0[2] = 0.02
        session = chain3_certifier.start(x0)
        result = chain3_certifier.certify(session, x0, np.zeros(chain3.m))
        shifted = shift_candidate(chain3, chain3_artifacts, result)
        mats = chain3.global_matrices
        K_f = chain3_artifacts.terminal.K
        z_N = np.concatenate([z[-1] for z in result.z])
        assert np.allclose(np.concatenate([z[-1] for z in shifted.z]), (mats.A + mats.B @ K_f) @ z_N)
        assert np.allclose(np.concatenate([v[-1] for v in shifted.v]), K_f @ z_N)
        assert np.allclose(shifted.z[1][0], result.z[1][1])

    def test_integrity_error(self, chain3, chain3_certifier):
        """Test that a measured state far from the prediction breaks the budget sum."""
        x0 = np.zeros(chain3.n)
        session = chain3_certifier.start(x0)
        result = chain3_certifier.certify(session, x0, np.zeros(chain3.m))
        with pytest.raises(SessionIntegrityError) as exc_info:
            advance_session(session, np.full(chain3.n, 10.0), result)
        assert np.sum(exc_info.value.beta) > 1.0

    def test_advance_requires_solved_step(self, chain3, chain3_certifier):
        """Test that only feasible or fallback results advance a session."""
        x0 = np.zeros(chain3.n)
        session = chain3_certifier.start(x0)
        result = chain3_certifier.certify(session, x0, np.zeros(chain3.m))
        with pytest.raises(ValueError):
            advance_session(session, x0, replace(result, status="infeasible"))

    def test_advance_without_cache(self, chain3, chain3_certifier):
        """Test that a session built by hand cannot be advanced."""
        x0 = np.zeros(chain3.n)
        session = chain3_certifier.start(x0)
        result = chain3_certifier.certify(session, x0, np.zeros(chain3.m))
        with pytest.raises(MissingArtifactsError):
            advance_session(replace(session, programs=None), x0, result)

    def test_horizon_mismatch(self, chain3, chain3_artifacts, chain3_certifier):
        """Test that a certifier refuses a session of another horizon."""
        session = init_session(chain3, chain3_artifacts, np.zeros(chain3.n), horizon=HORIZON + 1)
        with pytest.raises(HorizonMismatchError):
            chain3_certifier.certify(session, np.zeros(chain3.n), np.zeros(chain3.m))

    def test_recursive_feasibility(self, chain3, chain3_certifier):
        """Test that the next program stays feasible under sampled disturbances."""
        rng = np.random.default_rng(11)
        x0 = np.zeros(chain3.n)
        x0[0] = -0.2
        session = chain3_certifier.start(x0)
        u_L = np.full(chain3.m, 0.5)
        result = chain3_certifier.certify(session, x0, u_L)
        for _ in range(15):
            w = np.concatenate(
                [sample_ellipsoid(sub.W.Q, sub.W.q, rng, 1)[0] for sub in chain3.subsystems]
            )
            x1 = step_truth(chain3, x0, result.u_cert, w)
            nxt = chain3_certifier.advance(session, x1, result)
            assert chain3_certifier.certify(nxt, x1, u_L).status == "feasible"


class TestCertify:
    """Tests for certification requests."""

    def test_build_program_binds_session(self, chain3, chain3_certifier):
        """Test that the cached program carries the request and the session budgets."""
        x0 = np.zeros(chain3.n)
        session = chain3_certifier.start(x0)
        x = np.full(chain3.n, 0.01)
        u_L = np.full(chain3.m, 0.2)
        request = CertRequest(x=x, u_L=u_L)
        program = build_program(chain3, chain3_certifier.artifacts, session, request)
        assert np.allclose(program.x.value, x)
        assert np.allclose(program.u_L.value, u_L)
        assert np.allclose(program.beta.value, session.beta)
        assert np.allclose(program.alpha.value, session.alpha)
        assert build_program(chain3, chain3_certifier.artifacts, session, request) is program

    def test_origin_passes_zero(self, benchmark, benchmark_artifacts):
        """Test that a zero proposal at the origin is certified unchanged."""
        certifier = SafetyCertifier(benchmark, benchmark_artifacts, horizon=10)
        x0 = np.zeros(benchmark.n)
        session = certifier.start(x0)
        result = certifier.certify(session, x0, np.zeros(benchmark.m))
        assert result.status == "feasible"
        assert np.allclose(result.u_cert, 0.0, atol=1e-5)
        assert result.objective <= 1e-6
        assert not result.modified

    def test_modified_flag_threshold(self, chain3, chain3_certifier):
        """Test that input changes above the pass-through tolerance count as modified."""
        session = chain3_certifier.start(np.zeros(chain3.n))
        result = chain3_certifier.certify(session, np.zeros(chain3.n), np.zeros(chain3.m))
        u_L = np.full(chain3.m, 0.3)
        tol = settings.passthrough_input_tol
        assert not replace(result, u_L=u_L, u_cert=u_L + 0.5 * tol).modified
        assert replace(result, u_L=u_L, u_cert=u_L + np.array([0.0, 2.0 * tol, 0.0])).modified

    def test_unsafe_proposal_modified(self, chain3, chain3_certifier):
        """Test that a proposal pushing against the tight bound is changed."""
        x0 = np.zeros(chain3.n)
        x0[3] = 0.2
        session = chain3_certifier.start(x0)
        u_L = np.zeros(chain3.m)
        u_L[1] = 5.0
        result = chain3_certifier.certify(session, x0, u_L)
        assert result.status == "feasible"
        assert result.modified
        assert result.u_cert[1] < 5.0

    def test_performance_objective(self, chain3, chain3_artifacts):
        """Test that the tube MPC objective ignores the proposal."""
        certifier = SafetyCertifier(chain3, chain3_artifacts, horizon=HORIZON, objective=ObjectiveKind.PERFORMANCE)
        x0 = np.zeros(chain3.n)
        session = certifier.start(x0)
        result = certifier.certify(session, x0, np.full(chain3.m, 3.0))
        assert np.allclose(result.u_cert, 0.0, atol=1e-4)

    def test_fallback_applies_candidate(self, chain3, chain3_artifacts, chain3_certifier):
        """Test that an infeasible program yields the candidate tube input."""
        session = chain3_certifier.start(np.zeros(chain3.n))
        x = np.full(chain3.n, 5.0)
        result = chain3_certifier.certify(session, x, np.zeros(chain3.m))
        assert result.status == "fallback"
        expected = session.candidate.tube_input(chain3, chain3_artifacts, x)
        assert np.allclose(result.u_cert, expected)

    def test_fallback_without_candidate(self, chain3, chain3_artifacts, chain3_certifier):
        """Test that a fallback without a stored candidate raises."""
        session = replace(chain3_certifier.start(np.zeros(chain3.n)), candidate=None)
        request = CertRequest(x=np.zeros(chain3.n), u_L=np.zeros(chain3.m))
        with pytest.raises(CertificationInfeasible):
            fallback_result(chain3, chain3_artifacts, session, request)

    def test_certifier_membership(self, chain3_certifier, chain3):
        """Test the certifier's cached membership test."""
        assert chain3_certifier.is_feasible(np.zeros(chain3.n))
        assert not chain3_certifier.is_feasible(np.full(chain3.n, 5.0))


@pytest.mark.slow
class TestBenchmarkPassThrough:
    """Pass-through of safe proposals on the nine-mass chain."""

    def test_passthrough_oracle(self, benchmark, benchmark_artifacts):
        """Test that linear-policy proposals feasible under pinning are returned unchanged."""
        rng = np.random.default_rng(3)
        certifier = SafetyCertifier(benchmark, benchmark_artifacts, horizon=10)
        policy = make_policy(PolicySpec(kind="linear-feedback"), benchmark)
        session = certifier.start(np.zeros(benchmark.n))
        checked = 0
        for _ in range(50):
            x = rng.uniform(-0.03, 0.03, benchmark.n)
            request = CertRequest(x=x, u_L=policy(x, 0))
            if passthrough_feasible(benchmark, benchmark_artifacts, session, request):
                checked += 1
                result = certify(benchmark, benchmark_artifacts, session, request)
                assert result.objective <= 1e-6
                assert np.max(np.abs(result.u_cert - request.u_L)) <= 1e-5
                assert not result.modified
        assert checked > 0


@pytest.mark.slow
class TestSafeSetGrowth:
    """Tests for the implicit safe set over horizons."""

    def test_monotone_in_horizon(self, benchmark, benchmark_artifacts):
        """Test that states feasible for N = 5 stay feasible for N = 10."""
        rng = np.random.default_rng(0)
        short = SafetyCertifier(benchmark, benchmark_artifacts, horizon=5)
        long = SafetyCertifier(benchmark, benchmark_artifacts, horizon=10)
        found = 0
        while found < 20:
            x = np.zeros(benchmark.n)
            x[0::2] = rng.uniform(-0.3, 0.05, benchmark.M)
            if short.is_feasible(x):
                found += 1
                assert long.is_feasible(x)
