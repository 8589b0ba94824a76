"""Compare the compiled and pure-numpy CSR kernels.

Usage: python benchmarks/bench_kernels.py [--dim 64] [--repeats 5]

Times spmm (sparse @ dense) and spmm_t (sparse.T @ dense) per backend on
a few graph sizes and prints the best-of-N wall time plus the speedup of
the compiled extension when it is available. Outputs of the backends are
also cross-checked for exact equality.
"""

import argparse
from time import perf_counter

import numpy as np

from mbrec.kernels import get_backends
from mbrec.sparse import SparseAdjacency

SIZES = [
    # (rows, cols, density)
    (1_000, 800, 0.01),
    (5_000, 4_000, 0.005),
    (20_000, 15_000, 0.001),
]


def random_csr(rng, rows, cols, density):
    nnz = int(rows * cols * density)
    flat = rng.choice(rows * cols, size=nnz, replace=False)
    r, c = np.divmod(flat, cols)
    return SparseAdjacency.from_coo(r, c, rng.standard_normal(nnz),
                                    rows, cols)


def best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = perf_counter()
        fn()
        best = min(best, perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = get_backends()
    print(f"backends: {', '.join(backends)}; dense dim {args.dim}; "
          f"best of {args.repeats}")
    header = f"{'size':>22} {'op':>7}"
    for name in backends:
        header += f" {name:>12}"
    if len(backends) > 1:
        header += f" {'speedup':>9}"
    print(header)

    rng = np.random.default_rng(0)
    for rows, cols, density in SIZES:
        adj = random_csr(rng, rows, cols, density)
        dense_c = rng.standard_normal((cols, args.dim))
        dense_r = rng.standard_normal((rows, args.dim))
        for op, dense, out_rows in (("spmm", dense_c, rows),
                                    ("spmm_t", dense_r, cols)):
            times, outputs = {}, {}
            for name, mod in backends.items():
                fn = getattr(mod, op)
                call = (lambda f=fn, d=dense, n=out_rows:
                        f(adj.indptr, adj.indices, adj.data, d, n))
                outputs[name] = call()
                times[name] = best_time(call, args.repeats)
            names = list(backends)
            for other in names[1:]:
                np.testing.assert_array_equal(outputs[names[0]],
                                              outputs[other])
            label = f"{rows}x{cols} @{density:g}"
            line = f"{label:>22} {op:>7}"
            for name in names:
                line += f" {times[name] * 1e3:>10.2f}ms"
            if len(names) > 1:
                line += f" {times['python'] / times['compiled']:>8.1f}x"
            print(line)


if __name__ == "__main__":
    main()
