"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Also confirms both backends return bit-identical results on every input.
"""

import argparse
import time

import numpy as np

from kgaction import _accel
from kgaction.graph import build_fc_adjacency, normalize_adjacency


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba is not importable (or disabled); nothing to compare")
        return
    rng = np.random.default_rng(0)
    n_nodes, width = 501, 1024
    adj = normalize_adjacency(build_fc_adjacency(rng.normal(size=(n_nodes, 300)), 5)).matrix
    h = rng.normal(size=(n_nodes, width))
    w = rng.normal(size=(width, width)) / 32
    cases = {
        f"spmm {n_nodes}x{n_nodes} (nnz {adj.nnz}) x {width}": (
            lambda: _accel.spmm_numpy(adj.row_offsets, adj.col_indices, adj.values, h),
            lambda: _accel.spmm_numba(adj.row_offsets, adj.col_indices, adj.values, h),
        ),
        f"matmul {n_nodes}x{width} x {width}x{width}": (
            lambda: _accel.matmul_numpy(h, w),
            lambda: _accel.matmul_numba(h, w),
        ),
        f"row norms {n_nodes}x{width}": (
            lambda: _accel.row_norms_numpy(h),
            lambda: _accel.row_norms_numba(h),
        ),
    }
    # compile outside the timed region
    for _, fast in cases.values():
        fast()
    print(f"{'kernel':<44} {'numpy s':>9} {'numba s':>9} {'speedup':>8}  identical")
    for name, (slow, fast) in cases.items():
        t_np, a = best_of(slow, args.repeat)
        t_nb, b = best_of(fast, args.repeat)
        print(f"{name:<44} {t_np:9.4f} {t_nb:9.4f} {t_np / t_nb:8.2f}  {np.array_equal(a, b)}")


if __name__ == "__main__":
    main()
