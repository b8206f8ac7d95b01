"""Diffusion-function engine: QP, table construction, interpolation, closed forms."""

import numpy as np
import pytest

from hjbport.alpha import (
    AffineAlpha,
    AlphaTable,
    BenchmarkAlpha,
    MarketModel,
    build_alpha_table,
    eval_alpha,
    eval_alpha_closed,
    solve_parametric_qp,
)
from hjbport.errors import (
    ConfigError,
    NonConvex,
    PhiOutOfDomain,
    TableMonotonicityViolation,
)
from oracles import brute_force_qp, random_spd


@pytest.fixture
def identity_two():
    return MarketModel(mu=[0.1, 0.2], sigma_cov=np.eye(2))


class TestMarketModel:
    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(NonConvex):
            MarketModel(mu=[0.1, 0.1], sigma_cov=[[0.04, 0.01], [0.02, 0.04]])

    def test_indefinite_covariance_rejected(self):
        with pytest.raises(NonConvex):
            MarketModel(mu=[0.1, 0.1], sigma_cov=[[0.04, 0.09], [0.09, 0.04]])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            MarketModel(mu=[0.1, 0.1, 0.1], sigma_cov=np.eye(2))

    def test_negative_inflow_rejected(self):
        with pytest.raises(ConfigError):
            MarketModel(mu=[0.1], sigma_cov=[[0.01]], epsilon=-0.5)

    def test_arrays_are_immutable(self):
        m = MarketModel(mu=[0.1], sigma_cov=[[0.01]])
        with pytest.raises(ValueError):
            m.mu[0] = 0.0


class TestParametricQp:
    def test_single_asset_forced_weight(self):
        # Simplex with n=1 forces theta=1: value = -0.1 + ((1+1)/2)*0.04.
        sol = solve_parametric_qp(MarketModel(mu=[0.1], sigma_cov=[[0.04]]), 1.0)
        np.testing.assert_allclose(sol.theta, [1.0])
        assert sol.value == pytest.approx(-0.06, abs=1e-14)
        assert sol.active_set == {0}

    def test_two_asset_interior_solution(self, identity_two):
        # Oracle: 1-D brute force over theta_1 at step 1e-5, plus the interior
        # KKT point theta_1 = 1/2 - 0.1/(4c), c = (phi+1)/2.
        theta_ref, value_ref = brute_force_qp(
            identity_two.mu, identity_two.sigma_cov, 1.0, step=1e-5, refinements=0
        )
        np.testing.assert_allclose(theta_ref, [0.475, 0.525], atol=1e-10)
        assert value_ref == pytest.approx(0.34875, abs=1e-12)
        sol = solve_parametric_qp(identity_two, 1.0)
        np.testing.assert_allclose(sol.theta, theta_ref, atol=1e-9)
        assert sol.value == pytest.approx(value_ref, abs=1e-9)

    def test_variance_dominated_limit(self, identity_two):
        sol = solve_parametric_qp(identity_two, 1e3)
        np.testing.assert_allclose(sol.theta, [0.5, 0.5], atol=1e-3)

    def test_domain_floor(self, identity_two):
        for phi in (-1.0, -1.0 + 1e-7, -2.0):
            with pytest.raises(PhiOutOfDomain):
                solve_parametric_qp(identity_two, phi)

    def test_kkt_residual_and_feasibility(self):
        rng = np.random.default_rng(21)
        for n in (2, 3, 5):
            for _ in range(5):
                sigma = random_spd(rng, n, scale=0.3)
                mu = rng.uniform(-0.05, 0.25, n)
                phi = rng.uniform(-0.9, 15.0)
                model = MarketModel(mu=mu, sigma_cov=sigma)
                sol = solve_parametric_qp(model, phi)
                assert np.min(sol.theta) >= -1e-10
                assert sol.theta.sum() == pytest.approx(1.0, abs=1e-10)
                grad = (phi + 1.0) * (sigma @ sol.theta) - mu
                support = sorted(sol.active_set)
                lam = np.mean(grad[support])
                assert np.max(np.abs(grad[support] - lam)) < 1e-8 * (1 + abs(lam))

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(1234)
        for n in (2, 3):
            for _ in range(10):
                sigma = random_spd(rng, n)
                mu = rng.uniform(-0.05, 0.25, n)
                phi = rng.uniform(-0.9, 15.0)
                sol = solve_parametric_qp(MarketModel(mu=mu, sigma_cov=sigma), phi)
                theta_ref, value_ref = brute_force_qp(mu, sigma, phi)
                assert sol.value == pytest.approx(value_ref, abs=1e-5)
                assert np.max(np.abs(sol.theta - theta_ref)) < 1e-3


class TestAlphaTable:
    def test_single_asset_closed_form(self):
        # theta is forced to 1, so alpha(phi) = -m + ((phi+1)/2) s exactly.
        m, s = 0.1, 0.04
        table = build_alpha_table(MarketModel(mu=[m], sigma_cov=[[s]]), 0.0, 4.0, 0.5)
        expected = -m + 0.5 * (table.phi_grid + 1.0) * s
        np.testing.assert_allclose(table.alpha_vals, expected, atol=1e-15)
        np.testing.assert_allclose(table.alpha_prime_vals, s / 2.0, atol=1e-16)

    def test_node_count_formula(self, identity_two):
        table = build_alpha_table(identity_two, -1.0 + 1e-6, 15.0, 0.05)
        assert len(table.phi_grid) == int(np.ceil((15.0 - (-1.0 + 1e-6)) / 0.05)) + 1 == 321

    def test_matches_per_node_brute_force(self, identity_two):
        table = build_alpha_table(identity_two, 0.0, 4.0, 0.5)
        for phi, val in zip(table.phi_grid, table.alpha_vals):
            _, ref = brute_force_qp(identity_two.mu, identity_two.sigma_cov, float(phi))
            assert val == pytest.approx(ref, abs=1e-6)
        assert np.all(np.diff(table.alpha_vals) > 0)

    def test_breakpoint_second_derivative_jump(self, identity_two):
        # Support change at phi* = -0.9: vertex (0,1) below, interior above.
        table = build_alpha_table(identity_two, -0.99, 0.5, 0.01)
        breaks = table.breakpoint_nodes()
        assert len(breaks) == 1
        bk = breaks[0]
        assert abs(table.phi_grid[bk] - (-0.9)) <= 0.01 + 1e-12
        d1 = np.diff(table.alpha_vals)
        d2 = np.diff(d1)
        # Affine branch: second difference at rounding level; at the break a jump.
        assert np.max(np.abs(d2[: bk - 2])) < 1e-12
        assert np.max(np.abs(d2[bk - 2 : bk + 1])) > 1e-4
        # First difference stays continuous within O(h_phi).
        assert np.max(np.abs(np.diff(d1))) < 10.0 * table.h_phi**2 + 1e-3 * table.h_phi

    def test_envelope_derivative_consistency(self, synth_table):
        h = synth_table.h_phi
        fd = (synth_table.alpha_vals[2:] - synth_table.alpha_vals[:-2]) / (2 * h)
        err = np.abs(fd - synth_table.alpha_prime_vals[1:-1])
        exempt = np.zeros(len(err), dtype=bool)
        for bk in synth_table.breakpoint_nodes():
            exempt[max(bk - 2, 0) : bk + 1] = True
        assert np.all(err[~exempt] <= max(1e-4, 10 * h * h))

    def test_active_set_changes_isolated(self, synth_table):
        # Support size changes only at isolated nodes along increasing phi.
        breaks = synth_table.breakpoint_nodes()
        assert len(breaks) < 12
        assert np.all(np.diff(breaks) >= 2)

    def test_monotonicity_validation(self):
        with pytest.raises(TableMonotonicityViolation):
            AlphaTable(
                phi_grid=np.array([0.0, 0.5, 1.0]),
                alpha_vals=np.array([0.0, 0.2, 0.1]),
                alpha_prime_vals=np.array([0.1, 0.1, 0.1]),
                theta_rows=np.ones((3, 1)),
                phi_min_eff=0.0,
            ).validate()

    def test_minimizer_rows_feasible(self, synth_table):
        assert np.min(synth_table.theta_rows) >= -1e-10
        np.testing.assert_allclose(synth_table.theta_rows.sum(axis=1), 1.0, atol=1e-10)

    def test_table_is_immutable(self, synth_table):
        with pytest.raises(ValueError):
            synth_table.alpha_vals[0] = 0.0
        with pytest.raises(ValueError):
            synth_table.theta_rows[0, 0] = 0.5

    def test_csv_round_trip(self, synth_table, tmp_path):
        path = tmp_path / "table.csv"
        synth_table.to_csv(path)
        back = AlphaTable.from_csv(path)
        np.testing.assert_array_equal(back.phi_grid, synth_table.phi_grid)
        np.testing.assert_array_equal(back.alpha_vals, synth_table.alpha_vals)
        np.testing.assert_array_equal(back.alpha_prime_vals, synth_table.alpha_prime_vals)
        np.testing.assert_array_equal(back.theta_rows, synth_table.theta_rows)
        header = path.read_text().splitlines()[0]
        assert header == "phi,alpha,alpha_prime," + ",".join(
            f"theta_{j + 1}" for j in range(synth_table.n_assets)
        )

    def test_theta_interpolation_reproduces_nodes(self, synth_table):
        rows = synth_table.theta_at(synth_table.phi_grid[::25])
        np.testing.assert_allclose(rows, synth_table.theta_rows[::25], atol=1e-12)

    def test_theta_interpolation_stays_on_simplex(self, synth_table):
        rng = np.random.default_rng(2)
        phi = rng.uniform(-0.99, 15.0, 300)
        rows = synth_table.theta_at(phi)
        assert np.min(rows) >= 0.0
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


class TestEvalAlpha:
    def test_no_inflow_reduces_to_tilde(self, identity_two):
        table = build_alpha_table(identity_two, 0.0, 4.0, 0.5)
        a, ax, ap = eval_alpha(table, x=3.7, tau=0.2, phi=1.0, model=identity_two)
        ref, refd, _ = table.tilde(1.0)
        assert a == pytest.approx(float(ref[0]))
        assert ax == pytest.approx(0.0)
        assert ap == pytest.approx(float(refd[0]))

    def test_unit_inflow_at_origin(self):
        model = MarketModel(mu=[0.1, 0.2], sigma_cov=np.eye(2), epsilon=1.0)
        table = build_alpha_table(model, 0.0, 4.0, 0.5)
        node = 3
        a, ax, _ = eval_alpha(table, 0.0, 0.0, float(table.phi_grid[node]), model)
        assert a == pytest.approx(table.alpha_vals[node] - 1.0, abs=1e-14)
        assert ax == pytest.approx(1.0)

    def test_affine_table_interpolates_exactly(self):
        model = MarketModel(mu=[0.1], sigma_cov=[[0.04]])
        table = build_alpha_table(model, 0.0, 4.0, 0.5)
        phi = 0.25 + 0.5 * np.arange(4)  # midway between nodes
        a, _, _ = eval_alpha(table, 0.0, 0.0, phi, model)
        np.testing.assert_allclose(a, -0.1 + 0.5 * (phi + 1.0) * 0.04, atol=1e-12)


class TestClosedForms:
    def test_benchmark_values(self):
        a, ap = eval_alpha_closed(0.0)
        assert a == pytest.approx(-0.5) and ap == pytest.approx(1.25)
        a, ap = eval_alpha_closed(-1.0)
        assert a == pytest.approx(-2.0) and ap == pytest.approx(2.0)
        a, _ = eval_alpha_closed(1.0)
        assert a == pytest.approx(2.0 / 3.0)

    def test_pole_raises(self):
        with pytest.raises(PhiOutOfDomain):
            eval_alpha_closed(-2.0)
        with pytest.raises(ConfigError):
            eval_alpha_closed(0.0, kind="unknown")

    def test_benchmark_source_clamps(self):
        src = BenchmarkAlpha()
        val, der, clamped = src.tilde(np.array([-3.0, 0.0]))
        assert clamped == 1
        assert der[1] == pytest.approx(1.25)

    def test_affine_source_matches_single_asset_table(self):
        model = MarketModel(mu=[0.1], sigma_cov=[[0.04]])
        src = AffineAlpha.from_model(model)
        table = build_alpha_table(model, 0.0, 4.0, 0.5)
        v1, d1, _ = src.tilde(table.phi_grid)
        np.testing.assert_allclose(v1, table.alpha_vals, atol=1e-15)
        np.testing.assert_allclose(d1, table.alpha_prime_vals, atol=1e-16)
