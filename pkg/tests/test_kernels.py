"""CSR container invariants and sparse-kernel backend agreement."""

import subprocess
import sys

import numpy as np
import pytest

from mbrec import kernels
from mbrec.sparse import SparseAdjacency


def random_csr(rng, num_rows=13, num_cols=9, density=0.3):
    mask = rng.random((num_rows, num_cols)) < density
    rows, cols = np.nonzero(mask)
    vals = rng.standard_normal(len(rows))
    return SparseAdjacency.from_coo(rows, cols, vals, num_rows, num_cols)


class TestSparseAdjacency:
    def test_from_coo_sorts_rows_then_cols(self):
        adj = SparseAdjacency.from_coo([1, 0, 1], [0, 2, 2],
                                       [5.0, 7.0, 9.0], 2, 3)
        np.testing.assert_array_equal(adj.indptr, [0, 1, 3])
        np.testing.assert_array_equal(adj.indices, [2, 0, 2])
        np.testing.assert_array_equal(adj.data, [7.0, 5.0, 9.0])
        assert adj.nnz == 3

    def test_duplicate_entry_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            SparseAdjacency.from_coo([0, 0], [1, 1], [1.0, 2.0], 2, 2)

    @pytest.mark.parametrize("rows,cols", [([2], [0]), ([-1], [0]),
                                           ([0], [3]), ([0], [-1])])
    def test_out_of_range_rejected(self, rows, cols):
        with pytest.raises(ValueError, match="out of range"):
            SparseAdjacency.from_coo(rows, cols, [1.0], 2, 3)

    def test_nonfinite_value_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            SparseAdjacency.from_coo([0], [0], [np.inf], 1, 1)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matching lengths"):
            SparseAdjacency.from_coo([0, 1], [0], [1.0], 2, 2)

    def test_row_views(self):
        adj = SparseAdjacency.from_coo([0, 0, 1], [1, 3, 0],
                                       [1.0, 2.0, 3.0], 2, 4)
        cols, vals = adj.row(0)
        np.testing.assert_array_equal(cols, [1, 3])
        np.testing.assert_array_equal(vals, [1.0, 2.0])
        cols, vals = adj.row(1)
        np.testing.assert_array_equal(cols, [0])
        with pytest.raises(IndexError):
            adj.row(2)

    def test_with_data_replaces_values_only(self):
        adj = SparseAdjacency.from_coo([0, 1], [0, 1], [1.0, 2.0], 2, 2)
        swapped = adj.with_data(np.array([5.0, 6.0]))
        np.testing.assert_array_equal(swapped.data, [5.0, 6.0])
        np.testing.assert_array_equal(swapped.indices, adj.indices)
        np.testing.assert_array_equal(adj.data, [1.0, 2.0])
        with pytest.raises(ValueError, match="nnz"):
            adj.with_data(np.array([1.0]))

    def test_toarray_round_trip(self):
        rng = np.random.default_rng(3)
        adj = random_csr(rng)
        dense = adj.toarray()
        rows, cols = np.nonzero(dense)
        rebuilt = SparseAdjacency.from_coo(rows, cols, dense[rows, cols],
                                           adj.num_rows, adj.num_cols)
        np.testing.assert_array_equal(rebuilt.toarray(), dense)

    def test_matmul_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            adj = random_csr(rng)
            dense = rng.standard_normal((adj.num_cols, 4))
            np.testing.assert_allclose(adj.matmul(dense),
                                       adj.toarray() @ dense,
                                       rtol=0, atol=1e-12)

    def test_matmul_t_matches_dense_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            adj = random_csr(rng)
            dense = rng.standard_normal((adj.num_rows, 4))
            np.testing.assert_allclose(adj.matmul_t(dense),
                                       adj.toarray().T @ dense,
                                       rtol=0, atol=1e-12)

    def test_empty_matrix(self):
        adj = SparseAdjacency.from_coo([], [], [], 3, 2)
        assert adj.nnz == 0
        np.testing.assert_array_equal(adj.matmul(np.ones((2, 5))),
                                      np.zeros((3, 5)))
        np.testing.assert_array_equal(adj.matmul_t(np.ones((3, 5))),
                                      np.zeros((2, 5)))

    @pytest.mark.parametrize("op", ["matmul", "matmul_t"])
    def test_dense_operand_validated(self, op):
        adj = SparseAdjacency.from_coo([0], [0], [1.0], 2, 3)
        with pytest.raises(ValueError, match="rows"):
            getattr(adj, op)(np.ones((7, 2)))
        with pytest.raises(ValueError, match="2-d"):
            getattr(adj, op)(np.ones(3 if op == "matmul" else 2))


class TestBackends:
    def test_python_backend_always_available(self):
        assert "python" in kernels.get_backends()

    def test_active_backend_is_exported(self):
        assert kernels.BACKEND in ("python", "compiled")

    def test_backends_agree_bitwise(self):
        backends = kernels.get_backends()
        if len(backends) < 2:
            pytest.skip("compiled backend not built")
        rng = np.random.default_rng(11)
        for _ in range(10):
            adj = random_csr(rng, num_rows=31, num_cols=17, density=0.2)
            dense_c = rng.standard_normal((adj.num_cols, 8))
            dense_r = rng.standard_normal((adj.num_rows, 8))
            outs = [b.spmm(adj.indptr, adj.indices, adj.data, dense_c,
                           adj.num_rows) for b in backends.values()]
            np.testing.assert_array_equal(outs[0], outs[1])
            outs_t = [b.spmm_t(adj.indptr, adj.indices, adj.data, dense_r,
                               adj.num_cols) for b in backends.values()]
            np.testing.assert_array_equal(outs_t[0], outs_t[1])

    def test_env_var_forces_python_backend(self):
        out = subprocess.run(
            [sys.executable, "-c",
             "from mbrec import kernels; print(kernels.BACKEND)"],
            env={"MBREC_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"
