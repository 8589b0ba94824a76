"""Dense/sparse linear algebra kernels.

Hosts the sparse-dense product, an exact SVD (small-matrix test oracle),
the randomized truncated SVD used to build the low-rank augmented view,
and the three-factor product that applies it without materializing the
full reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sparse import SparseAdjacency

EXACT_SVD_LIMIT = 2000


@dataclass
class SvdFactors:
    """Truncated SVD factors: rows x rank_q, rank_q, cols x rank_q.

    singular_values are nonincreasing and nonnegative; factor columns are
    orthonormal to 1e-8.
    """

    u_factor: np.ndarray
    singular_values: np.ndarray
    v_factor: np.ndarray
    rank_q: int

    def reconstruct(self) -> np.ndarray:
        """Dense rank-q reconstruction (small matrices / tests only)."""
        return (self.u_factor * self.singular_values) @ self.v_factor.T


def spmm(adjacency: SparseAdjacency, dense: np.ndarray) -> np.ndarray:
    """Exact sparse @ dense product."""
    return adjacency.matmul(dense)


def exact_svd(a: np.ndarray) -> SvdFactors:
    """Full SVD of a small dense matrix via LAPACK (test oracle).

    Raises ValueError on non-finite input or matrices beyond the
    2000x2000 oracle limit.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("exact_svd expects a 2-d matrix")
    if a.shape[0] > EXACT_SVD_LIMIT or a.shape[1] > EXACT_SVD_LIMIT:
        raise ValueError(f"exact_svd limited to {EXACT_SVD_LIMIT}x{EXACT_SVD_LIMIT}")
    if not np.all(np.isfinite(a)):
        raise ValueError("exact_svd: non-finite input")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return SvdFactors(u_factor=u, singular_values=s, v_factor=vt.T,
                      rank_q=len(s))


def rsvd(adjacency: SparseAdjacency, q: int, oversampling: int = 5,
         power_iters: int = 2, seed: int = 0) -> SvdFactors:
    """Randomized rank-q SVD of a sparse matrix (sketch + power iterations).

    A Gaussian test matrix sampled from ``seed`` sketches the range, QR
    re-orthonormalization keeps the power iterations stable, and a small
    dense SVD of the projected matrix yields the factors, truncated to q.
    Deterministic for a fixed seed.
    """
    m, n = adjacency.num_rows, adjacency.num_cols
    if q < 1:
        raise ConfigError("rsvd rank q must be >= 1")
    sketch = q + oversampling
    if sketch > min(m, n):
        raise ConfigError(
            f"q + oversampling = {sketch} exceeds min(M, N) = {min(m, n)}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, sketch))
    y = adjacency.matmul(omega)
    qmat, _ = np.linalg.qr(y)
    for _ in range(power_iters):
        z, _ = np.linalg.qr(adjacency.matmul_t(qmat))
        qmat, _ = np.linalg.qr(adjacency.matmul(z))
    b = adjacency.matmul_t(qmat).T  # Q.T @ A, shape (sketch, n)
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = qmat @ ub
    return SvdFactors(u_factor=np.ascontiguousarray(u[:, :q]),
                      singular_values=s[:q].copy(),
                      v_factor=np.ascontiguousarray(vt[:q].T),
                      rank_q=q)


def low_rank_propagate(factors: SvdFactors, dense: np.ndarray,
                       transpose: bool = False) -> np.ndarray:
    """Apply the rank-q reconstruction to ``dense`` right-to-left.

    transpose=False computes U diag(s) V^T @ dense (rows-side output);
    transpose=True computes V diag(s) U^T @ dense (cols-side output).
    Cost O((rows + cols) * q * d); the full reconstruction is never formed.
    """
    dense = np.asarray(dense, dtype=np.float64)
    left, right = ((factors.v_factor, factors.u_factor) if transpose
                   else (factors.u_factor, factors.v_factor))
    if dense.ndim != 2 or dense.shape[0] != right.shape[0]:
        raise ValueError(
            f"low_rank_propagate: expected {right.shape[0]} rows, "
            f"got shape {dense.shape}")
    return left @ (factors.singular_values[:, None] * (right.T @ dense))
