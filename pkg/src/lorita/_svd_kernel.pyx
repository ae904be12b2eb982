# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled one-sided Jacobi sweep kernel.

Operates in place on the working matrix B (m x n, m >= n) and the
accumulated rotation matrix V (n x n). A pure-Python twin lives in
``_svd_fallback``; both must implement identical sweep order and
rotation formulas.
"""

from libc.math cimport fabs, sqrt

# Columns whose squared norm falls below this (B is pre-scaled to unit
# Frobenius norm) are numerically zero; rotating against them only
# chases rounding noise, so their pairs are skipped.
DEF DEAD_SQ = 1e-26


def jacobi_sweeps(double[:, ::1] B, double[:, ::1] V, double tol, int max_sweeps):
    """Run cyclic one-sided Jacobi sweeps until every column pair is
    orthogonal in the relative sense |b_i . b_j| <= tol * |b_i| * |b_j|,
    or max_sweeps is exhausted.

    Returns (sweeps_used, converged, last_max_offdiag) where the
    off-diagonal is the largest normalized overlap seen in the final sweep.
    """
    cdef Py_ssize_t m = B.shape[0]
    cdef Py_ssize_t n = B.shape[1]
    cdef Py_ssize_t i, j, k, sweep
    cdef double alpha, beta, gamma, zeta, t, c, s, bi, bj, off, denom
    cdef bint rotated

    off = 0.0
    for sweep in range(max_sweeps):
        rotated = False
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    bi = B[k, i]
                    bj = B[k, j]
                    alpha += bi * bi
                    beta += bj * bj
                    gamma += bi * bj
                if alpha <= DEAD_SQ or beta <= DEAD_SQ:
                    continue
                denom = sqrt(alpha * beta)
                if fabs(gamma) / denom > off:
                    off = fabs(gamma) / denom
                if fabs(gamma) <= tol * denom:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    bi = B[k, i]
                    bj = B[k, j]
                    B[k, i] = c * bi - s * bj
                    B[k, j] = s * bi + c * bj
                for k in range(n):
                    bi = V[k, i]
                    bj = V[k, j]
                    V[k, i] = c * bi - s * bj
                    V[k, j] = s * bi + c * bj
        if not rotated:
            return sweep + 1, True, off
    return max_sweeps, False, off
