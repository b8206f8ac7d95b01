"""Diffusion function of the transformed equation: parametric simplex QP.

For a market with mean returns mu and covariance Sigma the function

    alpha_tilde(phi) = min_{theta in simplex} [ -mu.theta + ((phi+1)/2) theta.Sigma.theta ]

is the risk-adjusted cost minimized over long-only fully-invested weights.
It enters the risk-aversion PDE as a diffusion flux, so we tabulate it on a
fine phi grid together with its envelope derivative

    d(alpha_tilde)/d(phi) = (1/2) theta_hat.Sigma.theta_hat

and the minimizing weights theta_hat, and evaluate by monotone cubic
Hermite interpolation.  alpha_tilde is strictly increasing and C^1 with
isolated kinks in its second derivative where the set of positive weights
changes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import hermite_eval
from .errors import (
    ConfigError,
    NonConvex,
    PhiOutOfDomain,
    SolverError,
    TableMonotonicityViolation,
)

log = logging.getLogger(__name__)

# Strict convexity of the QP needs (phi+1)/2 > 0; the benchmark closed form
# has a pole at phi = -2.
PHI_DOMAIN_TOL = 1e-6
QP_PHI_FLOOR = -1.0 + PHI_DOMAIN_TOL
BENCHMARK_PHI_FLOOR = -2.0 + PHI_DOMAIN_TOL

_SYM_TOL = 1e-12
_FEAS_TOL = 1e-10


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MarketModel:
    """Market parameters: mean log-returns, covariance, inflow and risk-free rate.

    All rates are per unit time.  The covariance must be symmetric and
    positive definite; inflow and rate must be nonnegative.
    """

    mu: np.ndarray
    sigma_cov: np.ndarray
    epsilon: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        mu = _readonly(np.atleast_1d(self.mu))
        sigma = _readonly(np.atleast_2d(self.sigma_cov))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_cov", sigma)
        n = mu.shape[0]
        if mu.ndim != 1 or sigma.shape != (n, n):
            raise ConfigError(
                f"dimension mismatch: mu has length {n}, covariance is {sigma.shape}"
            )
        asym = float(np.max(np.abs(sigma - sigma.T))) if n else 0.0
        if asym > _SYM_TOL:
            raise NonConvex(f"covariance asymmetry {asym:.3e} exceeds {_SYM_TOL}")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise NonConvex("covariance is not positive definite") from None
        if self.epsilon < 0:
            raise ConfigError("negative portfolio inflow is out of scope")
        if self.rate < 0:
            raise ConfigError("risk-free rate must be nonnegative")

    @property
    def n_assets(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class QpSolution:
    """Minimizer of the parametric QP: weights, objective value, support set."""

    theta: np.ndarray
    value: float
    active_set: frozenset[int]


def _solve_support_kkt(q: float, sigma, mu, support):
    """Equality-constrained minimum on a given support set.

    Solves stationarity 2q Sigma theta - mu = lam * 1 together with
    sum(theta) = 1, all restricted to `support`.  Returns (theta_s, lam).
    """
    s = len(support)
    kkt = np.empty((s + 1, s + 1))
    kkt[:s, :s] = 2.0 * q * sigma[np.ix_(support, support)]
    kkt[:s, s] = -1.0
    kkt[s, :s] = 1.0
    kkt[s, s] = 0.0
    rhs = np.empty(s + 1)
    rhs[:s] = mu[support]
    rhs[s] = 1.0
    sol = np.linalg.solve(kkt, rhs)
    return sol[:s], sol[s]


def solve_parametric_qp(
    model: MarketModel, phi: float, warm_start: np.ndarray | None = None
) -> QpSolution:
    """Minimize -mu.theta + ((phi+1)/2) theta.Sigma.theta over the simplex.

    Primal active-set iteration: KKT solves on the current support,
    Lagrange-multiplier-driven releases (most negative first, then lowest
    index) and ratio-test removals (smallest ratio, then lowest index).
    A warm start from a nearby phi re-uses the support path.
    """
    if phi < QP_PHI_FLOOR - 1e-12:
        raise PhiOutOfDomain(f"phi={phi} is below the QP domain floor {QP_PHI_FLOOR}")
    q = 0.5 * (phi + 1.0)
    mu = model.mu
    sigma = model.sigma_cov
    n = model.n_assets

    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=float)
    if (
        warm_start is not None
        and warm_start.shape == (n,)
        and np.min(warm_start) > -_FEAS_TOL
        and warm_start.sum() > 0.5
    ):
        theta = np.maximum(warm_start, 0.0)
        theta = theta / theta.sum()
    else:
        theta = np.full(n, 1.0 / n)
    support = [i for i in range(n) if theta[i] > 1e-12] or [int(np.argmax(mu))]

    scale = float(np.max(np.abs(mu)) + 2.0 * q * np.max(np.abs(sigma)) + 1.0)
    mult_tol = 1e-11 * scale

    for _ in range(30 + 10 * n):
        theta_s, lam = _solve_support_kkt(q, sigma, mu, support)
        if np.min(theta_s) >= -_FEAS_TOL:
            theta = np.zeros(n)
            theta[support] = np.maximum(theta_s, 0.0)
            grad = 2.0 * q * (sigma @ theta) - mu
            inactive = [i for i in range(n) if i not in support]
            if not inactive:
                break
            nu = grad[inactive] - lam
            worst = int(np.argmin(nu))
            if nu[worst] >= -mult_tol:
                break
            support.append(inactive[worst])
            support.sort()
        else:
            # Step from the current feasible point toward the KKT candidate
            # until a support component hits zero; that index leaves.
            cur = theta[support]
            step_dir = theta_s - cur
            ratios = np.full(len(support), np.inf)
            shrinking = step_dir < -1e-300
            ratios[shrinking] = -cur[shrinking] / step_dir[shrinking]
            blocker = int(np.argmin(ratios))
            step = min(1.0, float(ratios[blocker]))
            cur = cur + step * step_dir
            cur[blocker] = 0.0
            theta = np.zeros(n)
            theta[support] = np.maximum(cur, 0.0)
            del support[blocker]
            if not support:
                raise SolverError("active-set support became empty")
    else:
        raise SolverError(f"active-set QP did not converge for phi={phi}")

    theta = theta / theta.sum()
    value = float(-mu @ theta + q * (theta @ sigma @ theta))
    active = frozenset(int(i) for i in np.flatnonzero(theta > _FEAS_TOL))
    return QpSolution(theta=_readonly(theta), value=value, active_set=active)


def _limit_slopes_monotone(values, h, slopes):
    """Clip proposed Hermite slopes so the interpolant stays increasing.

    Sufficient condition for monotone cubics on [x_i, x_{i+1}]: both end
    slopes lie in [0, 3*Delta_i].  Nodes are limited by the smaller of the
    two adjacent secants.
    """
    delta = np.diff(values) / h
    cap = np.empty_like(values)
    cap[0] = 3.0 * delta[0]
    cap[-1] = 3.0 * delta[-1]
    if len(values) > 2:
        cap[1:-1] = 3.0 * np.minimum(delta[:-1], delta[1:])
    return np.clip(slopes, 0.0, cap)


def _pchip_slopes(values, h):
    """Shape-preserving slope estimates on a uniform grid (harmonic means)."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    delta = np.diff(values) / h
    m = np.zeros(n)
    if n == 2:
        m[:] = delta[0]
        return m
    prod = delta[:-1] * delta[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = 2.0 * prod / (delta[:-1] + delta[1:])
    m[1:-1] = np.where(prod > 0, harm, 0.0)

    for edge, d0, d1 in ((0, delta[0], delta[1]), (n - 1, delta[-1], delta[-2])):
        cand = 0.5 * (3.0 * d0 - d1)
        if cand * d0 <= 0.0:
            cand = 0.0
        elif d0 * d1 <= 0.0 and abs(cand) > 3.0 * abs(d0):
            cand = 3.0 * d0
        m[edge] = cand
    return m


@dataclass(frozen=True)
class AlphaTable:
    """Tabulated alpha_tilde with envelope derivatives and minimizers.

    Immutable after construction; evaluation clamps out-of-range phi to the
    boundary nodes and reports how many queries were clamped.
    """

    phi_grid: np.ndarray
    alpha_vals: np.ndarray
    alpha_prime_vals: np.ndarray
    theta_rows: np.ndarray
    phi_min_eff: float
    epsilon: float = 0.0
    rate: float = 0.0
    _slopes: np.ndarray = field(default=None, repr=False)
    _theta_slopes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("phi_grid", "alpha_vals", "alpha_prime_vals", "theta_rows"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self._slopes is None:
            h = self.h_phi
            slopes = _limit_slopes_monotone(self.alpha_vals, h, self.alpha_prime_vals)
            tslopes = np.stack(
                [_pchip_slopes(col, h) for col in self.theta_rows.T], axis=1
            )
            object.__setattr__(self, "_slopes", _readonly(slopes))
            object.__setattr__(self, "_theta_slopes", _readonly(tslopes))

    @property
    def h_phi(self) -> float:
        return float(self.phi_grid[1] - self.phi_grid[0])

    @property
    def n_assets(self) -> int:
        return self.theta_rows.shape[1]

    @property
    def domain_lo(self) -> float:
        return float(self.phi_grid[0])

    @property
    def domain_hi(self) -> float:
        return float(self.phi_grid[-1])

    def validate(self) -> None:
        if np.any(np.diff(self.alpha_vals) <= 0.0):
            raise TableMonotonicityViolation(
                "tabulated alpha is not strictly increasing; QP solutions are suspect"
            )
        if np.any(self.alpha_prime_vals <= 0.0):
            raise TableMonotonicityViolation("tabulated alpha derivative is not positive")

    def tilde(self, phi):
        """Interpolated (alpha_tilde, d alpha_tilde/d phi, clamp count)."""
        return hermite_eval(
            float(self.phi_grid[0]), self.h_phi, self.alpha_vals, self._slopes, phi
        )

    def theta_at(self, phi):
        """Interpolated minimizing weights, projected back onto the simplex."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        out = np.empty((phi.shape[0], self.n_assets))
        for j in range(self.n_assets):
            vals, _, _ = hermite_eval(
                float(self.phi_grid[0]),
                self.h_phi,
                self.theta_rows[:, j],
                self._theta_slopes[:, j],
                phi,
            )
            out[:, j] = vals
        np.maximum(out, 0.0, out=out)
        out /= out.sum(axis=1, keepdims=True)
        return out

    def breakpoint_nodes(self, tol: float = 1e-9) -> np.ndarray:
        """Node indices where the support set differs from the previous node."""
        active = self.theta_rows > tol
        changed = np.any(active[1:] != active[:-1], axis=1)
        return np.flatnonzero(changed) + 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n = self.n_assets
            writer.writerow(
                ["phi", "alpha", "alpha_prime"] + [f"theta_{j + 1}" for j in range(n)]
            )
            for i in range(len(self.phi_grid)):
                row = [self.phi_grid[i], self.alpha_vals[i], self.alpha_prime_vals[i]]
                row += list(self.theta_rows[i])
                writer.writerow(f"{v:.17g}" for v in row)

    @classmethod
    def from_csv(cls, path, epsilon: float = 0.0, rate: float = 0.0) -> "AlphaTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["phi", "alpha", "alpha_prime"]:
                raise ConfigError(f"unexpected alpha table header in {path}")
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.asarray(rows)
        table = cls(
            phi_grid=data[:, 0],
            alpha_vals=data[:, 1],
            alpha_prime_vals=data[:, 2],
            theta_rows=data[:, 3:],
            phi_min_eff=float(data[0, 0]),
            epsilon=epsilon,
            rate=rate,
        )
        table.validate()
        return table


def build_alpha_table(
    model: MarketModel, phi_lo: float, phi_hi: float, h_phi: float
) -> AlphaTable:
    """Tabulate the QP value, its envelope derivative and the minimizers.

    Nodes run from phi_lo in steps of h_phi; construction warm-starts each
    QP from the previous node's weights (the minimizer path is continuous).
    """
    if not (QP_PHI_FLOOR - PHI_DOMAIN_TOL < phi_lo < phi_hi):
        raise PhiOutOfDomain(f"need -1 < phi_lo < phi_hi, got ({phi_lo}, {phi_hi})")
    if h_phi <= 0:
        raise ConfigError("h_phi must be positive")
    phi_lo = max(phi_lo, QP_PHI_FLOOR)
    npts = int(np.ceil((phi_hi - phi_lo) / h_phi - 1e-12)) + 1
    grid = phi_lo + h_phi * np.arange(npts)

    n = model.n_assets
    alpha_vals = np.empty(npts)
    alpha_prime = np.empty(npts)
    thetas = np.empty((npts, n))
    warm = None
    for i, phi in enumerate(grid):
        sol = solve_parametric_qp(model, float(phi), warm_start=warm)
        alpha_vals[i] = sol.value
        alpha_prime[i] = 0.5 * float(sol.theta @ model.sigma_cov @ sol.theta)
        thetas[i] = sol.theta
        warm = sol.theta

    table = AlphaTable(
        phi_grid=grid,
        alpha_vals=alpha_vals,
        alpha_prime_vals=alpha_prime,
        theta_rows=thetas,
        phi_min_eff=float(grid[0]),
        epsilon=model.epsilon,
        rate=model.rate,
    )
    table.validate()
    return table


def eval_alpha(table: AlphaTable, x, tau, phi, model: MarketModel):
    """Full diffusion value alpha = alpha_tilde(phi) - epsilon*exp(-x) - rate.

    Returns (alpha, d alpha/dx, d alpha/d phi).  tau is accepted for
    interface uniformity; inflow and rate are constant in time here.
    """
    del tau
    x = np.asarray(x, dtype=float)
    tilde_val, tilde_der, n_clamped = table.tilde(phi)
    if n_clamped:
        log.warning("eval_alpha clamped %d phi quer%s to the table domain",
                    n_clamped, "y" if n_clamped == 1 else "ies")
    decay = model.epsilon * np.exp(-x)
    alpha = tilde_val + (-decay - model.rate)
    alpha_x = decay * np.ones_like(tilde_val)
    return alpha, alpha_x, tilde_der


def eval_alpha_closed(phi, kind: str = "benchmark"):
    """Closed-form alpha used by the traveling-wave benchmark.

    alpha(phi) = phi - 1/(phi+2), alpha'(phi) = 1 + 1/(phi+2)^2.
    """
    if kind != "benchmark":
        raise ConfigError(f"unknown closed-form alpha kind: {kind!r}")
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= BENCHMARK_PHI_FLOOR):
        raise PhiOutOfDomain(f"phi must exceed {BENCHMARK_PHI_FLOOR} (pole at -2)")
    shift = phi + 2.0
    return phi - 1.0 / shift, 1.0 + 1.0 / shift**2


class BenchmarkAlpha:
    """Closed-form alpha source for the traveling-wave test (no market)."""

    domain_lo = BENCHMARK_PHI_FLOOR
    epsilon = 0.0
    rate = 0.0

    def tilde(self, phi):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        n_clamped = int(np.count_nonzero(phi < BENCHMARK_PHI_FLOOR))
        phi = np.maximum(phi, BENCHMARK_PHI_FLOOR)
        shift = phi + 2.0
        return phi - 1.0 / shift, 1.0 + 1.0 / shift**2, n_clamped


class AffineAlpha:
    """Exact single-asset alpha_tilde(phi) = -m + ((phi+1)/2) s.

    Used as the exact-evaluation lane: no interpolation error at all.
    """

    domain_lo = QP_PHI_FLOOR

    def __init__(self, mean: float, variance: float, epsilon: float = 0.0, rate: float = 0.0):
        if variance <= 0:
            raise NonConvex("single-asset variance must be positive")
        self.mean = float(mean)
        self.variance = float(variance)
        self.epsilon = float(epsilon)
        self.rate = float(rate)

    @classmethod
    def from_model(cls, model: MarketModel) -> "AffineAlpha":
        if model.n_assets != 1:
            raise ConfigError("AffineAlpha requires a single-asset model")
        return cls(
            float(model.mu[0]),
            float(model.sigma_cov[0, 0]),
            model.epsilon,
            model.rate,
        )

    def tilde(self, phi):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        n_clamped = int(np.count_nonzero(phi < QP_PHI_FLOOR))
        phi = np.maximum(phi, QP_PHI_FLOOR)
        val = -self.mean + 0.5 * (phi + 1.0) * self.variance
        der = np.full_like(phi, 0.5 * self.variance)
        return val, der, n_clamped
