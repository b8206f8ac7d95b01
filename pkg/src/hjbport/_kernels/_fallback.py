"""Pure-Python/NumPy kernels, used when the compiled extension is absent.

Same contracts as ``hjbport._kernels._core``; the tridiagonal sweep is an
interpreted loop and is the slow part of this lane.
"""

import numpy as np

from ..errors import ZeroPivot

BACKEND = "python"


def thomas_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system by forward elimination / back substitution.

    All four arrays have length n; ``lower[0]`` and ``upper[-1]`` are ignored.
    No pivoting: callers guarantee strict diagonal dominance.
    """
    n = len(diag)
    lo = np.asarray(lower, dtype=float).tolist()
    dg = np.asarray(diag, dtype=float).tolist()
    up = np.asarray(upper, dtype=float).tolist()
    rh = np.asarray(rhs, dtype=float).tolist()
    cp = [0.0] * n
    xp = [0.0] * n

    piv = dg[0]
    if abs(piv) < 1e-300:
        raise ZeroPivot("zero pivot at row 0")
    cp[0] = up[0] / piv
    xp[0] = rh[0] / piv
    for i in range(1, n):
        piv = dg[i] - lo[i] * cp[i - 1]
        if abs(piv) < 1e-300:
            raise ZeroPivot(f"zero pivot at row {i}")
        cp[i] = up[i] / piv
        xp[i] = (rh[i] - lo[i] * xp[i - 1]) / piv

    for i in range(n - 2, -1, -1):
        xp[i] -= cp[i] * xp[i + 1]
    return np.asarray(xp)


def hermite_eval(x0, dx, values, slopes, q):
    """Evaluate a cubic Hermite interpolant on a uniform grid.

    Queries outside [x0, x0 + (len(values)-1)*dx] are clamped to the
    boundary; the clamp count is returned for diagnostics.

    Returns (interpolant values, interpolant derivative, n_clamped).
    """
    values = np.asarray(values, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    n = values.shape[0]
    x_last = x0 + (n - 1) * dx

    n_clamped = int(np.count_nonzero((q < x0) | (q > x_last)))
    qc = np.clip(q, x0, x_last)

    idx = np.floor((qc - x0) / dx).astype(np.intp)
    np.clip(idx, 0, n - 2, out=idx)
    t = (qc - (x0 + idx * dx)) / dx

    y0 = values[idx]
    y1 = values[idx + 1]
    m0 = slopes[idx] * dx
    m1 = slopes[idx + 1] * dx

    t2 = t * t
    t3 = t2 * t
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + t
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    val = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1

    d00 = 6.0 * t2 - 6.0 * t
    d10 = 3.0 * t2 - 4.0 * t + 1.0
    d01 = -d00
    d11 = 3.0 * t2 - 2.0 * t
    der = (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / dx

    return val, der, n_clamped


def cumtrapz_uniform(y, h):
    """Running trapezoid antiderivative on a uniform mesh; out[0] = 0."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * h * (y[:-1] + y[1:]), out=out[1:])
    return out
