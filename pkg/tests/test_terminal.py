"""
Tests for terminal ingredients and time-varying local terminal levels.
"""

import numpy as np
import pytest

from src.core.config import settings
from src.netmodel.sets import sample_ellipsoid
from src.terminal import (
    NegativeLevelError,
    TerminalIngredients,
    TerminalSynthesisError,
    check_terminal_membership,
    level_budget,
    synthesize_terminal,
    update_alpha,
    verify_terminal,
)
from src.terminal.synthesis import _DecreaseCheck
from src.tube import TightenedConstraints
from tests.conftest import scalar_model


def untightened(model) -> TightenedConstraints:
    """Original constraints wrapped as tightened sets (zero tube)."""
    return TightenedConstraints(
        X_bar=[sub.X for sub in model.subsystems],
        U_bar=[sub.U for sub in model.subsystems],
        state_support=[np.zeros(sub.X.n_rows) for sub in model.subsystems],
        input_support=[np.zeros(sub.U.n_rows) for sub in model.subsystems],
    )


class TestScalarTerminal:
    """Tests for the terminal set of an open-loop stable scalar subsystem."""

    def test_unit_level_with_zero_gain(self):
        """Test that P_f = 1, K_f = 0 and alpha_bar = 1 form a valid terminal set."""
        model = scalar_model(a=0.5, q=0.0)
        ingredients = TerminalIngredients.from_blocks(model, [np.array([[1.0]])], [np.array([[0.0]])], 1.0)
        certificate = verify_terminal(ingredients, model, untightened(model))
        assert certificate.ok
        assert ingredients.Gamma[0][0, 0] == pytest.approx(0.25 - 1.0)

    def test_level_budget_closed_form(self):
        """Test that the level budget is the squared offset over the squared support."""
        model = scalar_model(a=0.5, q=0.0)
        budget = level_budget(model, untightened(model), np.array([[1.0]]), np.array([[0.0]]))
        assert budget == pytest.approx(1.0)
        budget = level_budget(model, untightened(model), np.array([[4.0]]), np.array([[0.0]]))
        assert budget == pytest.approx(4.0)

    def test_lyapunov_decrease(self):
        """Test that synthesized ingredients satisfy the discrete Lyapunov inequality."""
        model = scalar_model(a=0.5, q=0.0)
        ingredients = synthesize_terminal(model, untightened(model))
        A_cl = 0.5 + ingredients.K[0, 0]
        P_f = ingredients.P[0, 0]
        assert A_cl * P_f * A_cl - P_f <= 1e-9
        assert ingredients.alpha_bar > 0.0

    def test_rejected_solutions_raise(self, monkeypatch):
        """Test that synthesis fails when no solver's solution passes the decrease re-check."""
        model = scalar_model(a=0.5, q=0.0)
        monkeypatch.setattr(
            "src.terminal.synthesis._check_candidate",
            lambda model, E_values, gains, lam, solver: _DecreaseCheck(solver, 1.0, 2.0),
        )
        with pytest.raises(TerminalSynthesisError, match="no certified solution"):
            synthesize_terminal(model, untightened(model))

    def test_next_solver_after_rejection(self, monkeypatch):
        """Test that a rejected primary solution is replaced by the fallback solver's."""
        model = scalar_model(a=0.5, q=0.0)
        seen = []

        def check(model, E_values, gains, lam, solver):
            seen.append(solver)
            if solver == settings.conic_solver:
                return _DecreaseCheck(solver, 1.0, 2.0)
            return _DecreaseCheck(solver, 0.0, 0.5)

        monkeypatch.setattr("src.terminal.synthesis._check_candidate", check)
        ingredients = synthesize_terminal(model, untightened(model))
        assert seen == [settings.conic_solver, settings.fallback_solver]
        assert ingredients.alpha_bar > 0.0

    def test_shape_bounded_below(self):
        """Test that terminal shape inverses respect the configured floor."""
        model = scalar_model(a=0.5, q=0.0)
        ingredients = synthesize_terminal(model, untightened(model))
        assert ingredients.P[0, 0] <= 1.0 / settings.terminal_min_shape * (1.0 + 1e-6)

    def test_nonpositive_budget_rejected(self, scalar):
        """Test that a nonpositive level budget is rejected."""
        with pytest.raises(ValueError):
            TerminalIngredients.from_blocks(scalar, [np.array([[1.0]])], [np.array([[0.0]])], 0.0)


class TestBenchmarkTerminal:
    """Tests for the synthesized terminal ingredients of the nine-mass chain."""

    def test_certificate(self, benchmark, benchmark_artifacts):
        """Test decrease, containment and sampled invariance on the boundary."""
        certificate = verify_terminal(
            benchmark_artifacts.terminal, benchmark, benchmark_artifacts.tightened, samples=1000
        )
        assert certificate.ok
        assert certificate.invariance_violations == 0
        assert certificate.input_violations == 0

    def test_closed_loop_contracts(self, benchmark, benchmark_artifacts):
        """Test that the terminal law is stable and the initial levels fit the budget."""
        terminal = benchmark_artifacts.terminal
        mats = benchmark.global_matrices
        A_cl = mats.A + mats.B @ terminal.K
        assert np.max(np.abs(np.linalg.eigvals(A_cl))) < 1.0
        assert np.sum(terminal.alpha0) <= terminal.alpha_bar * (1.0 + 1e-12)
        decrease = terminal.decrease_matrix(benchmark)
        assert np.max(np.linalg.eigvalsh(decrease)) <= 1e-7 * np.linalg.norm(terminal.P, 2)

    def test_decrease_matrix_matches_global(self, benchmark, benchmark_artifacts):
        """Test that the lifted residuals sum to A_cl' P_f A_cl - P_f."""
        terminal = benchmark_artifacts.terminal
        mats = benchmark.global_matrices
        A_cl = mats.A + mats.B @ terminal.K
        expected = A_cl.T @ terminal.P @ A_cl - terminal.P
        assert np.allclose(terminal.decrease_matrix(benchmark), expected, atol=1e-10)

    def test_initial_levels_sum_to_budget(self, benchmark, benchmark_artifacts):
        """Test that the uniform split of alpha_bar sums to alpha_bar."""
        terminal = benchmark_artifacts.terminal
        assert terminal.alpha0.shape == (benchmark.M,)
        assert np.sum(terminal.alpha0) == pytest.approx(terminal.alpha_bar)

    def test_gains_are_neighborhood_sparse(self, chain3, chain3_artifacts):
        """Test that terminal gains only read the neighborhood."""
        K = chain3_artifacts.terminal.K
        assert np.all(K[chain3.input_slice(0), chain3.state_slice(2)] == 0.0)
        assert np.all(K[chain3.input_slice(2), chain3.state_slice(0)] == 0.0)


class TestLevelUpdate:
    """Tests for the local level recursion."""

    def test_zero_state_keeps_levels(self, chain3, chain3_artifacts):
        """Test that a zero terminal state leaves the levels unchanged."""
        terminal = chain3_artifacts.terminal
        z = [np.zeros(chain3.neighborhood_dim(i)) for i in range(chain3.M)]
        assert np.allclose(update_alpha(terminal, terminal.alpha0, z), terminal.alpha0)

    def test_level_sum_decreases(self, chain3, chain3_artifacts, rng):
        """Test that the level sum does not grow for a common global terminal state."""
        terminal = chain3_artifacts.terminal
        alpha = np.full(chain3.M, 10.0)
        for _ in range(50):
            z = rng.standard_normal(chain3.n) * 0.05
            z_N = [chain3.neighborhood(z, i) for i in range(chain3.M)]
            updated = update_alpha(terminal, alpha, z_N)
            assert np.sum(updated) <= np.sum(alpha) + 1e-9

    def test_levels_clamped_at_zero(self, chain3, chain3_artifacts):
        """Test that updated levels never go negative."""
        terminal = chain3_artifacts.terminal
        z = np.ones(chain3.n)
        z_N = [chain3.neighborhood(z, i) for i in range(chain3.M)]
        assert np.all(update_alpha(terminal, np.zeros(chain3.M), z_N) >= 0.0)

    def test_negative_level_rejected(self, chain3, chain3_artifacts):
        """Test that negative input levels raise."""
        z = [np.zeros(chain3.neighborhood_dim(i)) for i in range(chain3.M)]
        with pytest.raises(NegativeLevelError):
            update_alpha(chain3_artifacts.terminal, [-1.0, 0.0, 0.0], z)


class TestMembership:
    """Tests for local terminal membership."""

    def test_origin_at_zero_level(self):
        """Test that the origin satisfies a zero level."""
        assert check_terminal_membership(np.zeros(2), np.eye(2), 0.0)

    def test_twice_the_level(self):
        """Test that a point at twice the level is outside."""
        P_f = np.diag([2.0, 1.0])
        z = np.array([1.0, 0.0])
        assert not check_terminal_membership(z, P_f, 1.0)
        assert check_terminal_membership(z, P_f, 2.0)

    def test_local_implies_global(self, chain3, chain3_artifacts, rng):
        """Test that passing every local test implies the assembled global test."""
        terminal = chain3_artifacts.terminal
        alpha = terminal.alpha0
        points = sample_ellipsoid(terminal.P, terminal.alpha_bar, rng, 200)
        for z in points:
            local = [
                check_terminal_membership(z[chain3.state_slice(i)], terminal.P_blocks[i], alpha[i])
                for i in range(chain3.M)
            ]
            if all(local):
                assert z @ terminal.P @ z <= np.sum(alpha) + 1e-9
