"""Dense matrix algebra: matmul, one-sided Jacobi SVD, truncation, Schatten norms.

Matrices are 2-D C-contiguous float64 numpy arrays throughout. The SVD
is a hand-rolled one-sided Jacobi with a fixed cyclic sweep order so
results are deterministic (bit-identical for identical input). The
sweep inner loop runs in a compiled extension when available; a numpy
fallback with identical semantics is selected at import otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ShapeError

try:
    from . import _svd_kernel as _kernel

    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _svd_fallback as _kernel

    BACKEND = "fallback"

MAX_SWEEPS = 60
SWEEP_TOL = 1e-12  # column-pair overlap threshold, relative to the column norms
_RANK_TOL = 1e-13  # s below this (input pre-scaled to unit Frobenius) is zero


def as_mat(a, name="matrix"):
    """Validate/coerce to a 2-D float64 C-contiguous array with finite entries."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dims, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD A = u @ diag(s) @ vt with s sorted non-increasing."""

    u: np.ndarray  # m x k
    s: np.ndarray  # k, descending, non-negative
    vt: np.ndarray  # k x n

    @property
    def k(self):
        return self.s.shape[0]

    def reconstruct(self):
        return (self.u * self.s) @ self.vt


def _complete_orthonormal(u, zero_cols):
    """Replace columns listed in zero_cols with deterministic orthonormal fill."""
    m = u.shape[0]
    cand = 0
    for col in zero_cols:
        while True:
            if cand >= m:
                raise ConvergenceError("cannot complete orthonormal basis")
            v = np.zeros(m)
            v[cand] = 1.0
            cand += 1
            # two rounds of Gram-Schmidt for numerical safety
            for _ in range(2):
                v -= u @ (u.T @ v)
            norm = np.linalg.norm(v)
            if norm > 0.5:
                u[:, col] = v / norm
                break
    return u


def svd(a):
    """One-sided Jacobi SVD. Deterministic; raises ConvergenceError with the
    off-diagonal residual if the sweep cap is hit."""
    a = as_mat(a)
    m, n = a.shape
    transposed = m < n
    work = a.T.copy() if transposed else a.copy()
    wm, wn = work.shape

    scale = float(np.linalg.norm(work))
    if scale > 0.0:
        work = np.ascontiguousarray(work / scale)
    v = np.eye(wn)

    if scale > 0.0:
        sweeps, converged, off = _kernel.jacobi_sweeps(work, v, SWEEP_TOL, MAX_SWEEPS)
        if not converged:
            raise ConvergenceError(
                f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps "
                f"(worst normalized column overlap {off:.3e})",
                residual=off,
            )

    s = np.linalg.norm(work, axis=0)
    order = np.argsort(-s, kind="stable")  # descending, ties by column index
    s = s[order]
    u = work[:, order]
    v = v[:, order]

    zero_cols = []
    for i in range(wn):
        if s[i] > _RANK_TOL:
            u[:, i] /= s[i]
        else:
            s[i] = 0.0
            u[:, i] = 0.0
            zero_cols.append(i)
    if zero_cols:
        u = _complete_orthonormal(u, zero_cols)

    s = s * scale
    vt = np.ascontiguousarray(v.T)
    if transposed:
        u, vt = vt.T.copy(), np.ascontiguousarray(u.T)

    # sign convention: first nonzero entry of each u column non-negative
    for i in range(s.shape[0]):
        col = u[:, i]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0.0:
            u[:, i] = -col
            vt[i, :] = -vt[i, :]

    return SvdResult(u=np.ascontiguousarray(u), s=s, vt=vt)


def truncate(svd_result, r):
    """Rank-r factors (a_factor m x r, b_factor r x n) of the best rank-r
    approximation; singular values are folded into the left factor."""
    k = svd_result.k
    if not 1 <= r <= k:
        raise ShapeError(f"truncation rank {r} out of range [1, {k}]")
    a_factor = svd_result.u[:, :r] * svd_result.s[:r]
    b_factor = svd_result.vt[:r, :]
    return np.ascontiguousarray(a_factor), np.ascontiguousarray(b_factor)


def schatten_norm(a, p):
    """(sum_i s_i^p)^(1/p); p=1 nuclear, p=2 Frobenius."""
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    s = svd(a).s
    s = s[s > 0]
    if s.size == 0:
        return 0.0
    return float(np.sum(s**p) ** (1.0 / p))
