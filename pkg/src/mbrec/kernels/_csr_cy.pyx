# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels: sparse @ dense and sparse.T @ dense.

Serial loops over nonzeros; deterministic accumulation order.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def spmm(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
         cnp.float64_t[::1] data, cnp.float64_t[:, ::1] dense,
         Py_ssize_t num_rows):
    """Return ``A @ dense`` for a CSR matrix A with ``num_rows`` rows."""
    cdef Py_ssize_t d = dense.shape[1]
    out_arr = np.zeros((num_rows, d), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c, j
    cdef cnp.float64_t v
    for i in range(num_rows):
        for p in range(indptr[i], indptr[i + 1]):
            c = indices[p]
            v = data[p]
            for j in range(d):
                out[i, j] += v * dense[c, j]
    return out_arr


def spmm_t(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
           cnp.float64_t[::1] data, cnp.float64_t[:, ::1] dense,
           Py_ssize_t num_cols):
    """Return ``A.T @ dense`` by scattering row contributions to columns."""
    cdef Py_ssize_t num_rows = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    out_arr = np.zeros((num_cols, d), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c, j
    cdef cnp.float64_t v
    for i in range(num_rows):
        for p in range(indptr[i], indptr[i + 1]):
            c = indices[p]
            v = data[p]
            for j in range(d):
                out[c, j] += v * dense[i, j]
    return out_arr
