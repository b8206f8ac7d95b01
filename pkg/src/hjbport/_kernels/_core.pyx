# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot per-step operations.

Mirrors ``hjbport._kernels._fallback``; keep the two lanes in sync.
"""

import numpy as np

cimport numpy as cnp

from ..errors import ZeroPivot

cnp.import_array()

BACKEND = "compiled"


def thomas_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system by forward elimination / back substitution.

    All four arrays have length n; ``lower[0]`` and ``upper[-1]`` are ignored.
    No pivoting: callers guarantee strict diagonal dominance.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lo = np.ascontiguousarray(lower, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dg = np.ascontiguousarray(diag, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] up = np.ascontiguousarray(upper, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rh = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t n = dg.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cp = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xp = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double piv

    piv = dg[0]
    if piv < 1e-300 and piv > -1e-300:
        raise ZeroPivot("zero pivot at row 0")
    cp[0] = up[0] / piv
    xp[0] = rh[0] / piv
    for i in range(1, n):
        piv = dg[i] - lo[i] * cp[i - 1]
        if piv < 1e-300 and piv > -1e-300:
            raise ZeroPivot(f"zero pivot at row {i}")
        cp[i] = up[i] / piv
        xp[i] = (rh[i] - lo[i] * xp[i - 1]) / piv

    for i in range(n - 2, -1, -1):
        xp[i] = xp[i] - cp[i] * xp[i + 1]
    return xp


def hermite_eval(double x0, double dx, values, slopes, q):
    """Evaluate a cubic Hermite interpolant on a uniform grid.

    Queries outside [x0, x0 + (len(values)-1)*dx] are clamped to the
    boundary; the clamp count is returned for diagnostics.

    Returns (interpolant values, interpolant derivative, n_clamped).
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vv = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ss = np.ascontiguousarray(slopes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] qq = np.ascontiguousarray(
        np.atleast_1d(np.asarray(q, dtype=np.float64)))
    cdef Py_ssize_t n = vv.shape[0]
    cdef Py_ssize_t m = qq.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] val = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] der = np.empty(m, dtype=np.float64)
    cdef double x_last = x0 + (n - 1) * dx
    cdef Py_ssize_t i, idx
    cdef int n_clamped = 0
    cdef double x, t, t2, t3, y0, y1, m0, m1
    cdef double h00, h10, h01, h11, d00, d10, d11

    for i in range(m):
        x = qq[i]
        if x < x0:
            x = x0
            n_clamped += 1
        elif x > x_last:
            x = x_last
            n_clamped += 1
        idx = <Py_ssize_t>((x - x0) / dx)
        if idx > n - 2:
            idx = n - 2
        elif idx < 0:
            idx = 0
        t = (x - (x0 + idx * dx)) / dx
        y0 = vv[idx]
        y1 = vv[idx + 1]
        m0 = ss[idx] * dx
        m1 = ss[idx + 1] * dx
        t2 = t * t
        t3 = t2 * t
        h00 = 2.0 * t3 - 3.0 * t2 + 1.0
        h10 = t3 - 2.0 * t2 + t
        h01 = -2.0 * t3 + 3.0 * t2
        h11 = t3 - t2
        val[i] = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
        d00 = 6.0 * t2 - 6.0 * t
        d10 = 3.0 * t2 - 4.0 * t + 1.0
        d11 = 3.0 * t2 - 2.0 * t
        der[i] = (d00 * y0 + d10 * m0 - d00 * y1 + d11 * m1) / dx

    return val, der, n_clamped


def cumtrapz_uniform(y, double h):
    """Running trapezoid antiderivative on a uniform mesh; out[0] = 0."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yy.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    out[0] = 0.0
    for i in range(1, n):
        out[i] = out[i - 1] + 0.5 * h * (yy[i - 1] + yy[i])
    return out
