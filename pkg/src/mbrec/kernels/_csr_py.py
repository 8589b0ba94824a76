"""Pure-numpy fallback for the CSR kernels.

Same contracts as the compiled module; uses COO-style scatter adds, which
are correct but markedly slower (see benchmarks/bench_kernels.py).
"""

import numpy as np


def _coo_rows(indptr):
    counts = np.diff(indptr)
    return np.repeat(np.arange(len(counts), dtype=np.int64), counts)


def spmm(indptr, indices, data, dense, num_rows):
    out = np.zeros((num_rows, dense.shape[1]), dtype=np.float64)
    if len(indices):
        rows = _coo_rows(indptr)
        np.add.at(out, rows, data[:, None] * dense[indices])
    return out


def spmm_t(indptr, indices, data, dense, num_cols):
    out = np.zeros((num_cols, dense.shape[1]), dtype=np.float64)
    if len(indices):
        rows = _coo_rows(indptr)
        np.add.at(out, indices, data[:, None] * dense[rows])
    return out
