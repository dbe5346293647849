"""Hot kernels with a numba path and a pure-numpy path.

Both paths accumulate every output entry in the same order (left to right
over the inner index, row-major), so they agree bit for bit.  The numba path
is used when numba imports and ``KGACTION_NO_NUMBA`` is unset or ``0``.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None


def _env_disables_numba():
    return os.environ.get("KGACTION_NO_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


HAVE_NUMBA = numba is not None
BACKEND = "numba" if HAVE_NUMBA and not _env_disables_numba() else "numpy"


# --------------------------------------------------------------------------
# numpy reference path

def matmul_numpy(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.zeros((n, p), dtype=np.float64)
    # one rank-1 update per inner index keeps the summation order fixed
    for k in range(m):
        out += a[:, k : k + 1] * b[k]
    return out


def spmm_numpy(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    if data.size == 0:
        return out
    counts = np.diff(indptr)
    for q in range(int(counts.max())):
        rows = np.nonzero(counts > q)[0]
        pos = indptr[rows] + q
        out[rows] += data[pos, None] * dense[indices[pos]]
    return out


def row_norms_numpy(x):
    acc = np.zeros(x.shape[0], dtype=np.float64)
    for k in range(x.shape[1]):
        acc += x[:, k] * x[:, k]
    return np.sqrt(acc)


# --------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def matmul_numba(a, b):
        n, m = a.shape
        p = b.shape[1]
        out = np.zeros((n, p), dtype=np.float64)
        for i in range(n):
            for k in range(m):
                aik = a[i, k]
                for j in range(p):
                    out[i, j] += aik * b[k, j]
        return out

    @numba.njit(cache=True)
    def spmm_numba(indptr, indices, data, dense):
        n = indptr.shape[0] - 1
        p = dense.shape[1]
        out = np.zeros((n, p), dtype=np.float64)
        for i in range(n):
            for q in range(indptr[i], indptr[i + 1]):
                v = data[q]
                c = indices[q]
                for j in range(p):
                    out[i, j] += v * dense[c, j]
        return out

    @numba.njit(cache=True)
    def row_norms_numba(x):
        n, m = x.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for k in range(m):
                acc += x[i, k] * x[i, k]
            out[i] = np.sqrt(acc)
        return out

else:  # pragma: no cover
    matmul_numba = matmul_numpy
    spmm_numba = spmm_numpy
    row_norms_numba = row_norms_numpy


if BACKEND == "numba":
    matmul_kernel = matmul_numba
    spmm_kernel = spmm_numba
    row_norms_kernel = row_norms_numba
else:
    matmul_kernel = matmul_numpy
    spmm_kernel = spmm_numpy
    row_norms_kernel = row_norms_numpy
