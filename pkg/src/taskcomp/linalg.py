"""Dense float64 linear algebra: a one-sided Jacobi SVD and numerical rank.

Matrices are plain 2-D ``numpy.ndarray`` objects; :func:`as_matrix` is the
single validation gate (finite entries, positive dimensions, float64).
The SVD kernel is deliberately self-contained: it orthogonalizes columns
with plane rotations, which is accurate for the small dense matrices this
package works with and easy to check against an independent factorization.
"""

from dataclasses import dataclass

import math

import numpy as np

from .errors import IterationLimit, ShapeMismatch

EPS = np.finfo(np.float64).eps

# A full sweep leaving every column pair orthogonal to this relative level
# terminates the iteration.
_PAIR_TOL = 10.0 * EPS

_DEFAULT_MAX_SWEEPS = 60


def as_matrix(m, name="matrix"):
    """Validate *m* as a finite 2-D float64 array and return it C-contiguous."""
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Compact SVD ``k = u @ diag(sigma) @ vt`` keeping only rank-revealing parts.

    ``u`` is m-by-rank with orthonormal columns, ``vt`` is rank-by-n with
    orthonormal rows, ``sigma`` is strictly positive and non-increasing.
    ``rank == 0`` (zero matrix) leaves all three factors empty.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray
    rank: int


def _one_sided_jacobi(a, max_sweeps):
    """Orthogonalize the columns of *a* (m >= n assumed worthwhile, any shape works).

    Returns ``(g, v)`` with ``g = a @ v`` having mutually orthogonal columns
    and ``v`` orthogonal.  Raises IterationLimit if a sweep budget is exhausted
    before a full sweep passes without rotations.
    """
    g = a.copy()
    n = g.shape[1]
    v = np.eye(n)
    converged = False
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                gp = g[:, p]
                gq = g[:, q]
                alpha = gp @ gp
                beta = gq @ gq
                gamma = gp @ gq
                if abs(gamma) <= _PAIR_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.hypot(1.0, t)
                s = c * t
                new_p = c * gp - s * gq
                new_q = s * gp + c * gq
                g[:, p] = new_p
                g[:, q] = new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            converged = True
            break
    if not converged:
        raise IterationLimit(
            f"Jacobi SVD did not converge within {max_sweeps} sweeps; "
            "input may be ill-conditioned"
        )
    return g, v


def svd_compact(k, rank_tol=None, max_sweeps=_DEFAULT_MAX_SWEEPS):
    """Compact SVD of *k*, dropping singular values <= rank_tol * sigma_1.

    *rank_tol* is relative to the largest singular value and defaults to
    ``eps * max(m, n)``.  The factorization is made deterministic by forcing
    the largest-magnitude entry of each right singular vector positive.
    """
    a = as_matrix(k, "k")
    m, n = a.shape
    if rank_tol is None:
        rank_tol = EPS * max(m, n)
    elif rank_tol < 0:
        raise ValueError("rank_tol must be nonnegative")

    transposed = m < n
    work = a.T if transposed else a
    g, v = _one_sided_jacobi(work, max_sweeps)

    norms = np.linalg.norm(g, axis=0)
    order = np.argsort(-norms, kind="stable")
    sigma_all = norms[order]
    sigma1 = sigma_all[0] if sigma_all.size else 0.0
    rank = int(np.count_nonzero(sigma_all > rank_tol * sigma1)) if sigma1 > 0 else 0

    sigma = sigma_all[:rank].copy()
    left = g[:, order[:rank]] / sigma if rank else np.zeros((work.shape[0], 0))
    right = v[:, order[:rank]] if rank else np.zeros((work.shape[1], 0))

    if transposed:
        u, vt = right, left.T
    else:
        u, vt = left, right.T

    # Sign convention: largest-magnitude entry of each right singular vector
    # is positive (first such entry on ties).
    for i in range(rank):
        row = vt[i]
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            vt[i] = -row
            u[:, i] = -u[:, i]

    return SvdResult(u=u, sigma=sigma, vt=vt, rank=rank)


def numerical_rank(k, rank_tol=None, max_sweeps=_DEFAULT_MAX_SWEEPS):
    """Count of singular values above rank_tol * sigma_1; 0 for the zero matrix."""
    return svd_compact(k, rank_tol=rank_tol, max_sweeps=max_sweeps).rank
