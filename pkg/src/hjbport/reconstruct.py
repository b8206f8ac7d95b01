"""Recovery of the value function and optimal weights from a solved field.

With the risk-aversion field phi, the anchor coefficient paths a(t), b(t)
determine the value function

    V(x, t) = a(t) + b(t) * integral_{x_*}^{x} exp(-integral_{x_*}^{xi} phi) d(xi)

and the companion function psi = exp(integral_{x_*}^{x} phi)/b = 1/dV/dx.
All quadratures are composite trapezoid on the solver mesh.
"""

from __future__ import annotations

import numpy as np

from ._kernels import cumtrapz_uniform
from .errors import MonotonicityViolation, SolverError
from .pde import SolutionBundle, SolverGrid


def _require(bundle: SolutionBundle, attr: str):
    value = getattr(bundle, attr)
    if value is None:
        raise SolverError(f"bundle is missing {attr}; run the preceding stage first")
    return value


def reconstruct_a(bundle: SolutionBundle, grid: SolverGrid, c_util) -> np.ndarray:
    """Anchor value path by forward-in-tau Euler of da/dtau = -gamma*b + c.

    a(tau=0) = u(x_*); gamma and b come from the recorded layer paths, the
    running utility is evaluated at the anchor.  Stored on the bundle and
    returned.
    """
    b_path = _require(bundle, "b_path")
    gamma_path = _require(bundle, "gamma_path")
    m = grid.m_steps
    k = grid.k
    taus = k * np.arange(m)
    c_anchor = np.asarray(c_util.value(grid.x_star, taus), dtype=float)
    a = np.empty(m + 1)
    a[0] = bundle.u_anchor
    a[1:] = a[0] + np.cumsum(k * (-gamma_path[:-1] * b_path[:-1] + c_anchor))
    bundle.a_path = a
    return a


def _value_column(phi, a_layer, log_b_layer, grid: SolverGrid):
    e_phi = cumtrapz_uniform(phi, grid.h)
    inner = np.exp(-(e_phi - e_phi[grid.i_star]))
    outer = cumtrapz_uniform(inner, grid.h)
    delta = outer - outer[grid.i_star]
    scaled = np.zeros_like(delta)
    nz = delta != 0.0
    scaled[nz] = np.sign(delta[nz]) * np.exp(log_b_layer + np.log(np.abs(delta[nz])))
    return a_layer + scaled


def reconstruct_v(bundle: SolutionBundle, grid: SolverGrid) -> np.ndarray:
    """Value function on mesh x recorded snapshots; increasing in x.

    Raises MonotonicityViolation when a column decreases beyond rounding,
    which signals a corrupted field or a nonpositive b.
    """
    a_path = _require(bundle, "a_path")
    log_b_path = _require(bundle, "log_b_path")
    cols = []
    for layer, phi in zip(bundle.snapshot_layers, bundle.phi_snapshots):
        col = _value_column(phi, a_path[layer], log_b_path[layer], grid)
        if not np.all(np.isfinite(col)):
            raise MonotonicityViolation(
                f"reconstructed V is not finite at layer {layer}; field or b corrupted"
            )
        drops = np.diff(col)
        floor = -8.0 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(col))))
        if np.any(drops < floor):
            raise MonotonicityViolation(
                f"reconstructed V decreases at layer {layer}; field or b corrupted"
            )
        cols.append(col)
    v = np.column_stack(cols)
    bundle.V_field = v
    return v


def reconstruct_psi(bundle: SolutionBundle, grid: SolverGrid) -> np.ndarray:
    """Companion function psi = exp(int phi)/b, the reciprocal slope of V."""
    log_b_path = _require(bundle, "log_b_path")
    cols = []
    for layer, phi in zip(bundle.snapshot_layers, bundle.phi_snapshots):
        e_phi = cumtrapz_uniform(phi, grid.h)
        cols.append(np.exp(e_phi - e_phi[grid.i_star] - log_b_path[layer]))
    psi = np.column_stack(cols)
    bundle.psi_field = psi
    return psi


def extract_weights(bundle: SolutionBundle, table) -> np.ndarray:
    """Optimal weights per (x, recorded tau): interpolated QP minimizers.

    Componentwise shape-preserving interpolation of the tabulated rows,
    clipped and renormalized onto the simplex.
    """
    n_assets = table.n_assets
    out = np.empty((bundle.phi_snapshots[0].shape[0], len(bundle.phi_snapshots), n_assets))
    for col, phi in enumerate(bundle.phi_snapshots):
        out[:, col, :] = table.theta_at(phi)
    bundle.theta_field = out
    return out
