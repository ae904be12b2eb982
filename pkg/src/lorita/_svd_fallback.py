"""Pure-numpy twin of the compiled Jacobi sweep kernel.

Same sweep order and rotation formulas as ``_svd_kernel.pyx`` so the
two backends are interchangeable. Used when the extension is not
built; also the reference side of the backend benchmark.
"""

import math

# Squared-norm floor below which a column counts as numerically zero
# (B is pre-scaled to unit Frobenius norm); must match the kernel.
_DEAD_SQ = 1e-26


def jacobi_sweeps(B, V, tol, max_sweeps):
    """Cyclic one-sided Jacobi sweeps, in place on B (m x n) and V (n x n).

    Rotates until every live column pair satisfies
    |b_i . b_j| <= tol * |b_i| * |b_j|. Returns
    (sweeps_used, converged, last_max_offdiag) with the off-diagonal
    normalized by the column norms.
    """
    n = B.shape[1]
    off = 0.0
    for sweep in range(max_sweeps):
        rotated = False
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                bi = B[:, i]
                bj = B[:, j]
                alpha = float(bi @ bi)
                beta = float(bj @ bj)
                if alpha <= _DEAD_SQ or beta <= _DEAD_SQ:
                    continue
                gamma = float(bi @ bj)
                denom = math.sqrt(alpha * beta)
                if abs(gamma) / denom > off:
                    off = abs(gamma) / denom
                if abs(gamma) <= tol * denom:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * bi - s * bj
                new_j = s * bi + c * bj
                B[:, i] = new_i
                B[:, j] = new_j
                vi = V[:, i].copy()
                vj = V[:, j].copy()
                V[:, i] = c * vi - s * vj
                V[:, j] = s * vi + c * vj
        if not rotated:
            return sweep + 1, True, off
    return max_sweeps, False, off
