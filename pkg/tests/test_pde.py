"""Finite-volume evolution: grid, state, assembly, b updates, fixed points."""

import math

import numpy as np
import pytest

from hjbport._kernels import cumtrapz_uniform
from hjbport.alpha import AffineAlpha, MarketModel, build_alpha_table
from hjbport.errors import ConfigError, NonIncreasingUtility, NonpositiveB
from hjbport.market import synthetic_five_asset
from hjbport.pde import (
    BoundaryCondition,
    SolverGrid,
    SolverState,
    assemble_step,
    evolve,
    initial_condition,
    make_state,
    nonlocal_term,
    thomas_solve,
    update_b,
)
from hjbport.utility import ArctanUtility, CaraUtility, IntertemporalUtility, ZERO_UTILITY


def small_grid(n=9, x_left=-1.0, x_right=1.0, T=0.1, m=10, i_star=None):
    return SolverGrid(
        x_left=x_left,
        x_right=x_right,
        n_interior=n,
        horizon_T=T,
        m_steps=m,
        i_star=i_star if i_star is not None else (n + 1) // 2,
    )


class DecreasingUtility:
    def value(self, x):
        return -np.exp(np.asarray(x, dtype=float))

    def slope(self, x):
        return -np.exp(np.asarray(x, dtype=float))

    def risk_aversion(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


class TestSolverGrid:
    def test_spacing_construction(self):
        g = SolverGrid.from_spacing(-4.0, 8.0, 0.01, 1.0, 5e-5, x_star=-2.01)
        assert g.n_interior == 1199
        assert g.m_steps == 20000
        assert g.h == pytest.approx(0.01)
        assert g.i_star == 199
        assert g.x_star == pytest.approx(-2.01)
        xs = g.x_nodes()
        assert xs[0] == pytest.approx(-4.0)
        assert xs[-1] == pytest.approx(8.0)

    def test_non_dividing_spacing_rejected(self):
        with pytest.raises(ConfigError):
            SolverGrid.from_spacing(-4.0, 8.0, 0.013, 1.0, 5e-5)
        with pytest.raises(ConfigError):
            SolverGrid.from_spacing(-4.0, 8.0, 0.01, 1.0, 3e-5)

    def test_anchor_must_be_interior(self):
        with pytest.raises(ConfigError):
            SolverGrid(-1.0, 1.0, 9, 1.0, 10, i_star=0)
        with pytest.raises(ConfigError):
            SolverGrid(-1.0, 1.0, 9, 1.0, 10, i_star=10)

    def test_anchor_clamped_into_interior(self):
        g = SolverGrid.from_spacing(-1.0, 1.0, 0.5, 1.0, 0.25, x_star=-1.0)
        assert g.i_star == 1


class TestBoundaryCondition:
    def test_dirichlet_requires_evaluator(self):
        with pytest.raises(ConfigError):
            BoundaryCondition(kind="dirichlet")
        with pytest.raises(ConfigError):
            BoundaryCondition(kind="robin")

    def test_neumann_copies_edges(self):
        g = small_grid(3)
        phi = np.array([0.0, 1.0, 2.0, 3.0, 0.0])
        BoundaryCondition.neumann().fill(phi, g, 0.0)
        assert phi[0] == 1.0 and phi[-1] == 3.0


class TestInitialCondition:
    def test_cara_is_constant(self):
        g = small_grid()
        phi = initial_condition(CaraUtility(9.0), g)
        np.testing.assert_array_equal(phi, 9.0)

    def test_arctan_profile(self):
        g = SolverGrid.from_spacing(-2.0, 2.0, 0.5, 1.0, 0.25, x_star=0.0)
        phi = initial_condition(ArctanUtility(), g)
        xs = g.x_nodes()
        np.testing.assert_allclose(phi[1:-1], 2 * xs[1:-1] / (1 + xs[1:-1] ** 2))
        i0 = np.argmin(np.abs(xs))
        assert phi[i0] == 0.0
        assert phi[np.argmin(np.abs(xs - 1))] == pytest.approx(1.0)
        assert phi[np.argmin(np.abs(xs + 1))] == pytest.approx(-1.0)

    def test_decreasing_utility_rejected(self):
        with pytest.raises(NonIncreasingUtility):
            initial_condition(DecreasingUtility(), small_grid())


class TestNonlocalTerm:
    def test_zero_when_kappa_vanishes(self):
        g = small_grid()
        state = make_state(np.full(g.n_interior + 2, 9.0), 1.0, g)
        out = nonlocal_term(state, g, ZERO_UTILITY, 0.0)
        np.testing.assert_array_equal(out, 0.0)

    def test_anchor_node_has_unit_exponential(self):
        g = small_grid()
        c = IntertemporalUtility(kappa=1.0, d=2.0, rho=0.0)
        phi = np.full(g.n_interior + 2, 3.0)
        state = make_state(phi, 2.0, g)
        out = nonlocal_term(state, g, c, 0.3)
        xs = g.x_nodes()
        x_star = g.x_star
        expected = -g.h * (3.0 * c.dx(x_star, 0.3) + c.dxx(x_star, 0.3)) / 2.0
        assert out[g.i_star - 1] == pytest.approx(float(expected), rel=1e-13)

    def test_constant_field_gives_linear_antiderivative(self):
        g = small_grid()
        p = 2.5
        state = make_state(np.full(g.n_interior + 2, p), 1.0, g)
        xs = g.x_nodes()
        delta = state.cumulative_Phi - state.cumulative_Phi[g.i_star]
        np.testing.assert_allclose(delta, p * (xs - g.x_star), atol=1e-13)

    def test_nonpositive_b_rejected(self):
        g = small_grid()
        state = SolverState(
            phi=np.full(g.n_interior + 2, 1.0),
            b_scalar=-1.0,
            log_b=0.0,
            j_step=0,
            cumulative_Phi=np.zeros(g.n_interior + 2),
        )
        with pytest.raises(NonpositiveB):
            nonlocal_term(state, g, IntertemporalUtility(1.0, 1.0), 0.0)
        with pytest.raises(NonpositiveB):
            make_state(np.ones(g.n_interior + 2), 0.0, g)


class FlatAlpha:
    """alpha_tilde(phi) = c0 + c1*phi with unit derivative for hand assembly."""

    domain_lo = -10.0
    epsilon = 0.0
    rate = 0.0

    def __init__(self, c0=0.0, c1=1.0):
        self.c0, self.c1 = c0, c1

    def tilde(self, phi):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        return self.c0 + self.c1 * phi, np.full_like(phi, self.c1), 0


class TestUpdateB:
    def test_explicit_zero_omega_is_identity(self):
        # omega vanishes when alpha(phi*) * phi* = 0 and the field is flat.
        g = small_grid()
        state = make_state(np.zeros(g.n_interior + 2), 2.0, g)
        b = update_b(state, g, FlatAlpha(), FlatAlpha(), ZERO_UTILITY, mode="explicit")
        assert b == 2.0

    def test_implicit_constant_slope_quadrature(self):
        # With omega = 0 each implicit step adds exactly k*g.
        g = small_grid(m=25)

        class ConstSlope:
            def dx(self, x, tau):
                return 0.7

            def dxx(self, x, tau):
                return 0.0

            def value(self, x, tau):
                return 0.0

        state = make_state(np.zeros(g.n_interior + 2), 1.5, g)
        b = state.b_scalar
        for j in range(g.m_steps):
            state.b_scalar = b
            state.log_b = math.log(b)
            state.j_step = j
            b = update_b(state, g, FlatAlpha(), FlatAlpha(), ConstSlope(), mode="implicit")
        assert b == pytest.approx(1.5 + g.m_steps * g.k * 0.7, rel=1e-12)

    def test_cara_anchor_slope_magnitude(self):
        # b0 = u'(x_*) = 9*exp(9*2.01) for a=9, x_* = -2.01.
        util = CaraUtility(9.0)
        b0 = float(util.slope(-2.01))
        assert b0 == pytest.approx(9.0 * math.exp(18.09), rel=1e-14)
        assert 6.4e8 < b0 < 6.6e8

    def test_explicit_update_can_detect_sign_loss(self):
        g = small_grid(m=1, T=1.0)  # k = 1
        phi = np.full(g.n_interior + 2, 2.0)
        state = make_state(phi, 1.0, g)
        # alpha == -10 constant gives omega = -alpha*phi = 20 > 1/k, so the
        # explicit factor (1 - k*omega) goes negative.
        src = FlatAlpha(c0=-10.0, c1=0.0)
        with pytest.raises(NonpositiveB):
            update_b(state, g, src, src, ZERO_UTILITY, mode="explicit")


class TestAssembleStep:
    def test_constant_field_is_fixed_point(self):
        g = small_grid()
        src = AffineAlpha(mean=0.1, variance=0.04)
        phi = np.full(g.n_interior + 2, 9.0)
        state = make_state(phi, 1.0, g)
        lower, diag, upper, rhs = assemble_step(state, g, src, src, ZERO_UTILITY,
                                                BoundaryCondition.neumann())
        np.testing.assert_allclose(rhs, 9.0, atol=1e-13)
        new = thomas_solve(lower, diag, upper, rhs)
        np.testing.assert_allclose(new, 9.0, atol=1e-12)

    def test_single_interior_node_hand_assembly(self):
        # n=1, D == 1 everywhere, k = h^2: Dirichlet diagonal is 1 + 2 = 3.
        g = SolverGrid(x_left=0.0, x_right=1.0, n_interior=1, horizon_T=0.25,
                       m_steps=1, i_star=1)
        assert g.h == pytest.approx(0.5) and g.k == pytest.approx(0.25)
        src = FlatAlpha(c0=0.0, c1=1.0)  # derivative exactly 1
        bcv = BoundaryCondition.dirichlet(lambda x, tau: 0.0)
        phi = np.array([0.0, 2.0, 0.0])
        state = make_state(phi, 1.0, g)
        lower, diag, upper, rhs = assemble_step(state, g, src, src, ZERO_UTILITY, bcv)
        assert diag.shape == (1,)
        assert diag[0] == pytest.approx(3.0)
        # F difference: faces at phi=1, alpha=phi so F = -phi^2: -(1 - 1) = 0
        expected_rhs = (g.k / g.h) * (-(1.0) + 1.0) + 2.0
        assert rhs[0] == pytest.approx(expected_rhs)
        sol = thomas_solve(lower, diag, upper, rhs)
        assert sol[0] == pytest.approx(rhs[0] / 3.0)

    def test_diagonal_dominance(self, synth_model, synth_table):
        g = SolverGrid.from_spacing(-4.0, 8.0, 0.1, 1.0, 5e-3, x_star=-2.0)
        rng = np.random.default_rng(4)
        phi = np.clip(9.0 + rng.normal(0, 1, g.n_interior + 2), -0.9, 14.5)
        state = make_state(phi, 1.0, g)
        c = IntertemporalUtility(1.0, 8.0, 0.0)
        lower, diag, upper, rhs = assemble_step(state, g, synth_table, synth_model, c,
                                                BoundaryCondition.neumann())
        assert np.all(np.abs(diag) > np.abs(lower) + np.abs(upper))

    def test_zero_kappa_kills_source(self, synth_model, synth_table):
        g = small_grid()
        state = make_state(np.full(g.n_interior + 2, 9.0), 1.0, g)
        out = nonlocal_term(state, g, IntertemporalUtility(kappa=0.0, d=5.0), 0.0)
        np.testing.assert_array_equal(out, 0.0)


class TestEvolve:
    def test_merton_constant_preserved_per_step(self):
        src = AffineAlpha(mean=0.1, variance=0.04)
        g = SolverGrid.from_spacing(-4.0, 8.0, 0.05, 0.01, 1.25e-3, x_star=-2.0)

        worst = 0.0

        def watch(state, grid):
            nonlocal worst
            if state.j_step > 0:
                worst = max(worst, float(np.max(np.abs(state.phi - 9.0))) / state.j_step)

        evolve(g, src, CaraUtility(9.0), ZERO_UTILITY, BoundaryCondition.neumann(),
               observer=watch)
        assert worst < 1e-12

    def test_snapshots_at_requested_taus(self):
        src = AffineAlpha(mean=0.1, variance=0.04)
        g = SolverGrid.from_spacing(-1.0, 1.0, 0.1, 0.5, 0.05, x_star=0.0)
        bundle = evolve(g, src, CaraUtility(2.0), ZERO_UTILITY,
                        BoundaryCondition.neumann(), snapshot_taus=(0.0, 0.25, 0.5))
        assert bundle.taus == [0.0, 0.25, 0.5]
        assert bundle.snapshot_layers == [0, 5, 10]
        assert len(bundle.phi_snapshots) == 3

    def test_bounds_monitoring_counts_excursions(self):
        src = AffineAlpha(mean=0.1, variance=0.04)
        g = SolverGrid.from_spacing(-1.0, 1.0, 0.1, 0.1, 0.05, x_star=0.0)
        bundle = evolve(g, src, CaraUtility(9.0), ZERO_UTILITY,
                        BoundaryCondition.neumann(), bounds=(0.0, 1.0), bounds_margin=0.1)
        assert bundle.bounds_violations > 0
        assert bundle.phi_max_seen == pytest.approx(9.0)

    def test_cumulative_phi_matches_direct_sum(self):
        g = small_grid(n=50)
        rng = np.random.default_rng(8)
        phi = rng.normal(size=g.n_interior + 2)
        state = make_state(phi, 1.0, g)
        direct = np.array(
            [np.sum(0.5 * g.h * (phi[:i] + phi[1 : i + 1])) for i in range(len(phi))]
        )
        np.testing.assert_allclose(state.cumulative_Phi, direct, rtol=1e-13, atol=1e-14)

    def test_anchor_choice_leaves_field_invariant(self):
        model = synthetic_five_asset(epsilon=0.25)
        table = build_alpha_table(model, -1.0 + 1e-6, 15.0, 0.05)
        c = IntertemporalUtility(kappa=1.0, d=8.0, rho=0.0)
        fields = []
        for x_star in (-0.5, 0.4):
            g = SolverGrid.from_spacing(-1.0, 1.0, 0.02, 0.2, 2e-4, x_star=x_star)
            bundle = evolve(g, table, CaraUtility(9.0), c,
                            BoundaryCondition.neumann(), model=model,
                            snapshot_taus=[0.2])
            fields.append(bundle.phi_snapshots[-1])
        # The anchor only shifts O(k) bookkeeping, not the field itself
        # (measured 1.4e-5 on the finer reference configuration).
        assert np.max(np.abs(fields[0] - fields[1])) < 1e-4

    def test_domain_clamps_are_counted(self):
        # A table that stops below the initial field forces face clamping.
        model = MarketModel(mu=[0.1], sigma_cov=[[0.9]])
        table = build_alpha_table(model, 0.0, 4.0, 0.5)
        g = SolverGrid.from_spacing(-1.0, 1.0, 0.1, 0.05, 5e-3, x_star=0.0)
        bundle = evolve(g, table, CaraUtility(9.0), ZERO_UTILITY,
                        BoundaryCondition.neumann(), snapshot_taus=[0.05])
        assert bundle.clamp_count > 0

    def test_log_mode_tracks_raw_arithmetic(self):
        # Same run with a steep CARA utility on a left-shifted domain: b0 is
        # large enough to engage log storage; results must stay finite.
        model = synthetic_five_asset(epsilon=0.0)
        table = build_alpha_table(model, -1.0 + 1e-6, 15.0, 0.05)
        g = SolverGrid.from_spacing(-5.0, -1.0, 0.05, 0.1, 1.25e-3, x_star=-4.0)
        bundle = evolve(g, table, CaraUtility(9.0), ZERO_UTILITY,
                        BoundaryCondition.neumann(), model=model, snapshot_taus=[0.1])
        assert math.isfinite(bundle.log_b_path[-1])
        assert np.max(np.abs(bundle.phi_snapshots[-1] - 9.0)) < 1e-8
