"""CSR sparse matrix container used for the normalized adjacency matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class SparseAdjacency:
    """Immutable CSR matrix of shape (num_rows, num_cols).

    Invariants: no duplicate (row, col) entry, all values finite, indices
    within bounds. Construct via :meth:`from_coo` which enforces them.
    """

    num_rows: int
    num_cols: int
    indptr: np.ndarray  # int64, num_rows + 1
    indices: np.ndarray  # int64, nnz (column ids, sorted within a row)
    data: np.ndarray  # float64, nnz

    @classmethod
    def from_coo(cls, rows, cols, vals, num_rows, num_cols) -> "SparseAdjacency":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols, vals must have matching lengths")
        if len(rows):
            if rows.min() < 0 or rows.max() >= num_rows:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= num_cols:
                raise ValueError("column index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("adjacency values must be finite")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows) > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                raise ValueError("duplicate (row, col) entry")
        indptr = np.zeros(num_rows + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(num_rows, num_cols, indptr, cols, vals)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def row(self, i: int):
        """Column ids and values of row ``i`` as array views (no copy)."""
        if not 0 <= i < self.num_rows:
            raise IndexError(f"row {i} out of range [0, {self.num_rows})")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def with_data(self, data: np.ndarray) -> "SparseAdjacency":
        """Same sparsity pattern with replaced values (edge dropout)."""
        if data.shape != self.data.shape:
            raise ValueError("data length must match nnz")
        return SparseAdjacency(self.num_rows, self.num_cols, self.indptr,
                               self.indices, data)

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        """self @ dense, shape (num_rows, d)."""
        dense = _check_dense(dense, self.num_cols, "matmul")
        return kernels.spmm(self.indptr, self.indices, self.data, dense,
                            self.num_rows)

    def matmul_t(self, dense: np.ndarray) -> np.ndarray:
        """self.T @ dense, shape (num_cols, d)."""
        dense = _check_dense(dense, self.num_rows, "matmul_t")
        return kernels.spmm_t(self.indptr, self.indices, self.data, dense,
                              self.num_cols)

    def toarray(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols))
        for i in range(self.num_rows):
            cols, vals = self.row(i)
            out[i, cols] = vals
        return out


def _check_dense(dense, expected_rows, op):
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != expected_rows:
        raise ValueError(
            f"{op}: dense operand must be 2-d with {expected_rows} rows, "
            f"got shape {dense.shape}")
    return dense
