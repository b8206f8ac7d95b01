"""Semi-implicit finite-volume evolution of the risk-aversion field.

The transformed equation

    d(phi)/d(tau) = d^2/dx^2 alpha(.,phi) + d/dx(-alpha(.,phi) phi) + C

is integrated on dual volumes around uniform mesh nodes.  Diffusion is
implicit through the new-layer gradients with old-layer coefficients, the
transport and non-local source terms are explicit, and each step reduces to
one strictly diagonally dominant tridiagonal solve.  A scalar b (the slope
of the value function at an anchor node) is advanced alongside by an Euler
step of its ODE; b feeds the non-local source and must stay positive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._kernels import backend_name, cumtrapz_uniform, hermite_eval, thomas_solve
from .errors import ConfigError, NonIncreasingUtility, NonpositiveB, SolverError

__all__ = [
    "SolverGrid",
    "SolverState",
    "BoundaryCondition",
    "SolutionBundle",
    "initial_condition",
    "nonlocal_term",
    "update_b",
    "assemble_step",
    "thomas_solve",
    "evolve",
]

log = logging.getLogger(__name__)

# Above this magnitude of |log b0| the scalar b is carried in log space so
# that very steep terminal utilities cannot overflow the source term.
_LOG_B_SWITCH = 30.0


@dataclass(frozen=True)
class SolverGrid:
    """Uniform space-time mesh with an interior anchor node.

    Mesh nodes are x_i = x_left + i*h for i = 0..n_interior+1, so
    h = (x_right - x_left)/(n_interior + 1); time layers are tau_j = j*k
    with k = horizon_T/m_steps.
    """

    x_left: float
    x_right: float
    n_interior: int
    horizon_T: float
    m_steps: int
    i_star: int

    def __post_init__(self):
        if self.x_right <= self.x_left:
            raise ConfigError("x_right must exceed x_left")
        if self.n_interior < 1 or self.m_steps < 1:
            raise ConfigError("need at least one interior node and one time step")
        if self.horizon_T <= 0:
            raise ConfigError("horizon must be positive")
        if not 1 <= self.i_star <= self.n_interior:
            raise ConfigError(
                f"anchor index {self.i_star} not strictly interior "
                f"(valid range 1..{self.n_interior})"
            )

    @property
    def h(self) -> float:
        return (self.x_right - self.x_left) / (self.n_interior + 1)

    @property
    def k(self) -> float:
        return self.horizon_T / self.m_steps

    @property
    def x_star(self) -> float:
        return self.x_left + self.i_star * self.h

    def x_nodes(self) -> np.ndarray:
        return self.x_left + self.h * np.arange(self.n_interior + 2)

    @classmethod
    def from_spacing(
        cls,
        x_left: float,
        x_right: float,
        h: float,
        horizon_T: float,
        k: float,
        x_star: float | None = None,
        i_star: int | None = None,
    ) -> "SolverGrid":
        """Build a grid from target spacings; h and k must tile the domain."""
        width = x_right - x_left
        n_cells = width / h
        if abs(n_cells - round(n_cells)) > 1e-8 * max(1.0, n_cells):
            raise ConfigError(f"h={h} does not evenly divide [{x_left}, {x_right}]")
        m = horizon_T / k
        if abs(m - round(m)) > 1e-8 * max(1.0, m):
            raise ConfigError(f"k={k} does not evenly divide horizon {horizon_T}")
        n_interior = int(round(n_cells)) - 1
        if i_star is None:
            anchor = 0.5 * (x_left + x_right) if x_star is None else x_star
            i_star = int(round((anchor - x_left) / h))
            i_star = min(max(i_star, 1), n_interior)
        return cls(x_left, x_right, n_interior, horizon_T, int(round(m)), i_star)


@dataclass(frozen=True)
class BoundaryCondition:
    """Neumann-zero (discrete copy) or Dirichlet from a supplied function."""

    kind: str
    dirichlet_eval: Optional[Callable[[float, float], float]] = None

    def __post_init__(self):
        if self.kind not in ("neumann", "dirichlet"):
            raise ConfigError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dirichlet" and self.dirichlet_eval is None:
            raise ConfigError("Dirichlet boundaries need an evaluation function")

    @classmethod
    def neumann(cls) -> "BoundaryCondition":
        return cls(kind="neumann")

    @classmethod
    def dirichlet(cls, fn: Callable[[float, float], float]) -> "BoundaryCondition":
        return cls(kind="dirichlet", dirichlet_eval=fn)

    def fill(self, phi: np.ndarray, grid: SolverGrid, tau: float) -> None:
        if self.kind == "neumann":
            phi[0] = phi[1]
            phi[-1] = phi[-2]
        else:
            phi[0] = self.dirichlet_eval(grid.x_left, tau)
            phi[-1] = self.dirichlet_eval(grid.x_right, tau)


@dataclass
class SolverState:
    """Evolving field plus the scalar b and its running trapezoid integral.

    b is kept both as a raw value and as log(b); when |log b0| exceeds the
    switch threshold only the log value is advanced (raw may be inf) and all
    consumers divide by b through exp(... - log_b).
    """

    phi: np.ndarray
    b_scalar: float
    log_b: float
    j_step: int
    cumulative_Phi: np.ndarray
    clamp_count: int = 0
    log_mode: bool = False


def make_state(phi: np.ndarray, b0: float, grid: SolverGrid) -> SolverState:
    if not b0 > 0:
        raise NonpositiveB(f"initial anchor slope b0={b0} is not positive")
    log_b0 = math.log(b0)
    return SolverState(
        phi=np.asarray(phi, dtype=float).copy(),
        b_scalar=float(b0),
        log_b=log_b0,
        j_step=0,
        cumulative_Phi=cumtrapz_uniform(phi, grid.h),
        clamp_count=0,
        log_mode=abs(log_b0) > _LOG_B_SWITCH,
    )


def initial_condition(utility, grid: SolverGrid, bc: BoundaryCondition | None = None):
    """Pointwise risk aversion -u''/u' on the mesh, boundaries per BC."""
    xs = grid.x_nodes()
    slopes = np.asarray(utility.slope(xs), dtype=float)
    if np.any(slopes <= 0.0):
        bad = xs[np.argmin(slopes)]
        raise NonIncreasingUtility(f"terminal utility slope is not positive at x={bad}")
    phi = np.asarray(utility.risk_aversion(xs), dtype=float).copy()
    (bc or BoundaryCondition.neumann()).fill(phi, grid, 0.0)
    return phi


def nonlocal_term(state: SolverState, grid: SolverGrid, c_util, tau_j: float):
    """Explicit non-local source J_i on interior nodes at layer j.

    J_i = -h * exp(Phi_i - Phi_anchor)/b * (phi_i * c_x + c_xx), evaluated
    with the analytic x-derivatives of the running utility at t = T - tau.
    The exponential and 1/b are combined in log space so wide domains and
    steep utilities cannot overflow.
    """
    if not state.b_scalar > 0:
        raise NonpositiveB(f"b={state.b_scalar} at layer {state.j_step}")
    xs = grid.x_nodes()[1:-1]
    phi_i = state.phi[1:-1]
    cx = np.asarray(c_util.dx(xs, tau_j), dtype=float)
    cxx = np.asarray(c_util.dxx(xs, tau_j), dtype=float)
    term = phi_i * cx + cxx
    if not np.any(term):
        return np.zeros_like(phi_i)
    dphi = state.cumulative_Phi[1:-1] - state.cumulative_Phi[grid.i_star]
    out = np.zeros_like(phi_i)
    nz = term != 0.0
    with np.errstate(over="ignore"):
        # Overflow here means the field already blew up; the step's
        # finiteness guard reports it.
        out[nz] = -grid.h * np.sign(term[nz]) * np.exp(
            dphi[nz] - state.log_b + np.log(np.abs(term[nz]))
        )
    return out


def _omega_at_anchor(state: SolverState, grid: SolverGrid, alpha_source, model) -> float:
    """omega = alpha'_x + alpha'_phi * d(phi)/dx - alpha*phi at the anchor node."""
    i = grid.i_star
    phi_star = float(state.phi[i])
    tv, td, ncl = alpha_source.tilde(phi_star)
    state.clamp_count += ncl
    decay = model.epsilon * math.exp(-grid.x_star)
    alpha_star = float(tv[0]) - decay - model.rate
    grad = (state.phi[i + 1] - state.phi[i - 1]) / (2.0 * grid.h)
    return decay + float(td[0]) * grad - alpha_star * phi_star


def _advance_b(state: SolverState, omega: float, g: float, k: float, mode: str):
    """One Euler step of -db/dtau = omega*b - g; returns (b_raw, log_b)."""
    if mode == "explicit":
        if state.log_mode:
            ratio = (1.0 - k * omega) + k * g * math.exp(-state.log_b)
            if ratio <= 0.0:
                raise NonpositiveB("explicit b update lost positivity")
            log_b = state.log_b + math.log(ratio)
            return math.exp(log_b) if abs(log_b) < 700 else math.inf, log_b
        b = (1.0 - k * omega) * state.b_scalar + k * g
        if b <= 0.0:
            raise NonpositiveB(f"explicit b update produced b={b}")
        return b, math.log(b)
    if mode == "implicit":
        den = 1.0 + k * omega
        if den <= 0.0:
            raise NonpositiveB(f"implicit b update has nonpositive denominator {den}")
        if state.log_mode:
            ratio = (1.0 + k * g * math.exp(-state.log_b)) / den
            if ratio <= 0.0:
                raise NonpositiveB("implicit b update lost positivity")
            log_b = state.log_b + math.log(ratio)
            return math.exp(log_b) if abs(log_b) < 700 else math.inf, log_b
        b = (state.b_scalar + k * g) / den
        if b <= 0.0:
            raise NonpositiveB(f"implicit b update produced b={b}")
        return b, math.log(b)
    raise ConfigError(f"unknown b update mode {mode!r}")


def update_b(
    state: SolverState,
    grid: SolverGrid,
    alpha_source,
    model,
    c_util,
    mode: str = "implicit",
) -> float:
    """Next value of the anchor slope b from the current layer.

    Both variants evaluate omega and the utility slope at the old layer;
    the implicit form divides by (1 + k*omega) and is the robust default.
    """
    omega = _omega_at_anchor(state, grid, alpha_source, model)
    tau_j = state.j_step * grid.k
    g = float(c_util.dx(grid.x_star, tau_j))
    b_raw, _ = _advance_b(state, omega, g, grid.k, mode)
    return b_raw


def assemble_step(
    state: SolverState,
    grid: SolverGrid,
    alpha_source,
    model,
    c_util,
    bc: BoundaryCondition,
):
    """Tridiagonal system for the new layer: (lower, diag, upper, rhs).

    Face values of phi are arithmetic neighbor averages; diffusion
    coefficients, transport fluxes and the non-local source all use the old
    layer.  Neumann conditions fold the ghost coefficients into the first
    and last diagonal entries; Dirichlet conditions move the known new-layer
    boundary values to the right-hand side.
    """
    h = grid.h
    k = grid.k
    tau_j = state.j_step * grid.k
    phi = state.phi
    xs = grid.x_nodes()

    phi_face = 0.5 * (phi[:-1] + phi[1:])
    x_face = xs[:-1] + 0.5 * h
    tilde_val, tilde_der, ncl = alpha_source.tilde(phi_face)
    state.clamp_count += ncl
    decay = model.epsilon * np.exp(-x_face)
    alpha_face = tilde_val - decay - model.rate

    d_face = tilde_der
    e_face = decay
    f_face = -alpha_face * phi_face

    source = nonlocal_term(state, grid, c_util, tau_j)

    lam = k / (h * h)
    lower = -lam * d_face[:-1]
    upper = -lam * d_face[1:]
    diag = 1.0 + lam * (d_face[1:] + d_face[:-1])
    rhs = (k / h) * (source + np.diff(e_face) + np.diff(f_face)) + phi[1:-1]

    if bc.kind == "neumann":
        diag[0] += lower[0]
        diag[-1] += upper[-1]
    else:
        tau_next = tau_j + k
        rhs[0] -= lower[0] * bc.dirichlet_eval(grid.x_left, tau_next)
        rhs[-1] -= upper[-1] * bc.dirichlet_eval(grid.x_right, tau_next)
    return lower, diag, upper, rhs


@dataclass
class SolutionBundle:
    """Everything a finished run exposes for reconstruction and export."""

    grid: SolverGrid
    taus: list = field(default_factory=list)
    snapshot_layers: list = field(default_factory=list)
    phi_snapshots: list = field(default_factory=list)
    b_path: np.ndarray | None = None
    log_b_path: np.ndarray | None = None
    gamma_path: np.ndarray | None = None
    a_path: np.ndarray | None = None
    u_anchor: float = 0.0
    clamp_count: int = 0
    phi_min_seen: float = math.inf
    phi_max_seen: float = -math.inf
    bounds_violations: int = 0
    backend: str = ""
    V_field: np.ndarray | None = None
    psi_field: np.ndarray | None = None
    theta_field: np.ndarray | None = None

    def snapshot(self, tau: float) -> np.ndarray:
        """Stored field closest to the requested tau."""
        i = int(np.argmin(np.abs(np.asarray(self.taus) - tau)))
        return self.phi_snapshots[i]


def evolve(
    grid: SolverGrid,
    alpha_source,
    terminal_utility,
    c_util,
    bc: BoundaryCondition,
    *,
    model=None,
    b_mode: str = "implicit",
    snapshot_taus=(),
    observer=None,
    bounds: tuple[float, float] | None = None,
    bounds_margin: float | None = None,
) -> SolutionBundle:
    """March the field from tau=0 to the horizon and collect diagnostics.

    Each step: refresh the trapezoid antiderivative, assemble the
    tridiagonal system (non-local source from the old layer and old b),
    solve, apply boundary values, then advance b.  `bounds`, when given,
    are monitored a-priori bounds; excursions beyond them plus the margin
    are counted and logged, not fatal.
    """
    if model is None:
        model = alpha_source
    h = grid.h
    k = grid.k
    m = grid.m_steps

    phi0 = initial_condition(terminal_utility, grid, bc)
    b0 = float(terminal_utility.slope(grid.x_star))
    state = make_state(phi0, b0, grid)

    margin = bounds_margin if bounds_margin is not None else 10.0 * h

    snap_layers = sorted({int(round(t / k)) for t in snapshot_taus})
    if any(j < 0 or j > m for j in snap_layers):
        raise ConfigError("snapshot times outside [0, horizon]")

    bundle = SolutionBundle(grid=grid, backend=backend_name())
    bundle.u_anchor = float(terminal_utility.value(grid.x_star))
    b_path = np.empty(m + 1)
    log_b_path = np.empty(m + 1)
    gamma_path = np.empty(m + 1)
    b_path[0] = state.b_scalar
    log_b_path[0] = state.log_b

    def gamma_now() -> float:
        tv, _, _ = alpha_source.tilde(float(state.phi[grid.i_star]))
        return float(tv[0]) - model.epsilon * math.exp(-grid.x_star) - model.rate

    def track(phi_arr):
        lo = float(phi_arr.min())
        hi = float(phi_arr.max())
        bundle.phi_min_seen = min(bundle.phi_min_seen, lo)
        bundle.phi_max_seen = max(bundle.phi_max_seen, hi)
        if bounds is not None and (lo < bounds[0] - margin or hi > bounds[1] + margin):
            bundle.bounds_violations += 1
            log.warning(
                "phi left the monitored bounds at layer %d: [%g, %g] vs [%g, %g]",
                state.j_step, lo, hi, bounds[0] - margin, bounds[1] + margin,
            )

    track(state.phi)
    if 0 in snap_layers:
        bundle.taus.append(0.0)
        bundle.snapshot_layers.append(0)
        bundle.phi_snapshots.append(state.phi.copy())
    if observer is not None:
        observer(state, grid)

    for j in range(m):
        state.cumulative_Phi = cumtrapz_uniform(state.phi, h)
        gamma_path[j] = gamma_now()
        omega_j = _omega_at_anchor(state, grid, alpha_source, model)
        g_j = float(c_util.dx(grid.x_star, j * k))

        lower, diag, upper, rhs = assemble_step(state, grid, alpha_source, model, c_util, bc)
        new_interior = thomas_solve(lower, diag, upper, rhs)
        if not np.all(np.isfinite(new_interior)):
            raise SolverError(f"non-finite field after layer {j + 1}")

        state.b_scalar, state.log_b = _advance_b(state, omega_j, g_j, k, b_mode)
        state.phi[1:-1] = new_interior
        state.j_step = j + 1
        bc.fill(state.phi, grid, state.j_step * k)
        state.cumulative_Phi = cumtrapz_uniform(state.phi, h)

        b_path[j + 1] = state.b_scalar
        log_b_path[j + 1] = state.log_b
        track(state.phi)
        if state.j_step in snap_layers:
            bundle.taus.append(state.j_step * k)
            bundle.snapshot_layers.append(state.j_step)
            bundle.phi_snapshots.append(state.phi.copy())
        if observer is not None:
            observer(state, grid)

    gamma_path[m] = gamma_now()
    bundle.b_path = b_path
    bundle.log_b_path = log_b_path
    bundle.gamma_path = gamma_path
    bundle.clamp_count = state.clamp_count
    return bundle
