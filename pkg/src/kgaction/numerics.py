"""Deterministic dense/sparse linear algebra, Adam, and a gradient oracle.

Dense matrices are plain 2-D ``float64`` numpy arrays.  Sparse matrices are
square CSR containers (:class:`SparseMatrix`).  Every product accumulates in
a fixed left-to-right order, so results are reproducible across runs and
across the numba/numpy kernel backends.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .errors import DimensionError, NumericError, ValidationError

DENSE_MAGIC = b"KGDM"
DENSE_VERSION = 1


def as_dense(x, name="matrix"):
    """Coerce ``x`` to a C-contiguous 2-D float64 array and check finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise NumericError(f"{name} has a non-finite entry at index {bad}")
    return arr


@dataclass(frozen=True)
class SparseMatrix:
    """Square CSR matrix with sorted, unique column indices per row."""

    dim: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        if offsets.shape != (self.dim + 1,):
            raise ValidationError(f"row_offsets must have {self.dim + 1} entries, got {offsets.shape}")
        if offsets[0] != 0 or offsets[-1] != vals.size or cols.size != vals.size:
            raise ValidationError("row_offsets do not match the stored entries")
        if np.any(np.diff(offsets) < 0):
            raise ValidationError("row_offsets must be non-decreasing")
        if cols.size and (cols.min() < 0 or cols.max() >= self.dim):
            raise ValidationError("column index out of range")
        for i in range(self.dim):
            row = cols[offsets[i] : offsets[i + 1]]
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise ValidationError(f"row {i} column indices not strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise NumericError("sparse matrix stores a non-finite value")
        for arr in (offsets, cols, vals):
            arr.setflags(write=False)

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def shape(self):
        return (self.dim, self.dim)

    def row(self, i):
        """Return ``(columns, values)`` of row ``i``."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def to_dense(self):
        out = np.zeros((self.dim, self.dim), dtype=np.float64)
        rows = np.repeat(np.arange(self.dim), np.diff(self.row_offsets))
        out[rows, self.col_indices] = self.values
        return out

    def transpose(self):
        rows = np.repeat(np.arange(self.dim), np.diff(self.row_offsets))
        return SparseMatrix.from_coo(self.dim, self.col_indices, rows, self.values)

    def is_symmetric(self):
        t = self.transpose()
        return (
            np.array_equal(t.row_offsets, self.row_offsets)
            and np.array_equal(t.col_indices, self.col_indices)
            and np.array_equal(t.values, self.values)
        )

    def edges(self):
        """Yield ``(i, j, w)`` for every stored entry in row-major order."""
        for i in range(self.dim):
            cols, vals = self.row(i)
            for j, w in zip(cols, vals):
                yield i, int(j), float(w)

    @classmethod
    def from_coo(cls, dim, rows, cols, values):
        """Build from coordinate triplets; duplicate coordinates are rejected."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                k = int(np.nonzero(dup)[0][0])
                raise ValidationError(f"duplicate entry at ({rows[k]}, {cols[k]})")
        offsets = np.zeros(dim + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        return cls(dim, np.cumsum(offsets), cols, values)

    @classmethod
    def from_dense(cls, a):
        a = as_dense(a)
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"sparse matrices are square, got {a.shape}")
        rows, cols = np.nonzero(a)
        return cls.from_coo(a.shape[0], rows, cols, a[rows, cols])

    @classmethod
    def identity(cls, dim):
        idx = np.arange(dim)
        return cls(dim, np.arange(dim + 1), idx, np.ones(dim))

    @classmethod
    def empty(cls, dim):
        return cls(dim, np.zeros(dim + 1, dtype=np.int64), np.zeros(0, np.int64), np.zeros(0))


def densify(s: SparseMatrix) -> np.ndarray:
    return s.to_dense()


def matmul(a, b) -> np.ndarray:
    """Dense product with fixed row-major, left-to-right accumulation."""
    a = as_dense(a, "left operand")
    b = as_dense(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return _accel.matmul_kernel(a, b)


def matmul_tn(a, b) -> np.ndarray:
    """``a.T @ b`` with the same accumulation guarantees as :func:`matmul`."""
    return matmul(np.ascontiguousarray(np.asarray(a, dtype=np.float64).T), b)


def spmm(s: SparseMatrix, d) -> np.ndarray:
    """Sparse (CSR) times dense."""
    d = as_dense(d, "dense operand")
    if s.dim != d.shape[0]:
        raise DimensionError(f"cannot multiply sparse {s.shape} by dense {d.shape}")
    return _accel.spmm_kernel(s.row_offsets, s.col_indices, s.values, d)


def relu(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    """Zero the upstream gradient where ``x <= 0`` (subgradient 0 at the kink)."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise DimensionError(f"relu input {x.shape} and upstream {upstream.shape} differ")
    return np.where(x > 0.0, upstream, 0.0)


@dataclass
class AdamState:
    """Moment estimates for one parameter matrix."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        shape = np.shape(params)
        return cls(np.zeros(shape), np.zeros(shape), **kw)


def adam_step(params, grads, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam update.  Returns new params; mutates ``state``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not lr > 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    if not (params.shape == grads.shape == state.first_moment.shape == state.second_moment.shape):
        raise DimensionError(
            f"adam shapes differ: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}/{state.second_moment.shape}"
        )
    if not np.all(np.isfinite(grads)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(grads))[0])
        raise NumericError(f"non-finite gradient at index {bad}")
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def finite_difference_grad(loss, params, h=1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``loss`` at ``params``.

    ``loss`` is called with a perturbed copy of ``params`` (same shape).
    """
    if not h > 0:
        raise ValidationError(f"step size must be positive, got {h}")
    params = np.array(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss(params))
        flat[i] = orig - h
        down = float(loss(params))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"loss returned a non-finite value when perturbing index {i}")
        gflat[i] = (up - down) / (2.0 * h)
    return grad


# --------------------------------------------------------------------------
# dense matrix files

def write_dense_text(path, a):
    a = as_dense(a)
    lines = [f"dense {a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dense_text(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty dense matrix file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "dense":
        raise ValidationError(f"{path}: expected header 'dense <rows> <cols>'")
    rows, cols = int(head[1]), int(head[2])
    if len(lines) - 1 != rows:
        raise ValidationError(f"{path}: header says {rows} rows, found {len(lines) - 1}")
    out = np.zeros((rows, cols))
    for r, ln in enumerate(lines[1:]):
        vals = ln.split()
        if len(vals) != cols:
            raise ValidationError(f"{path}: line {r + 2} has {len(vals)} values, expected {cols}")
        out[r] = [float(v) for v in vals]
    return as_dense(out, str(path))


def dense_to_bytes(a) -> bytes:
    a = as_dense(a)
    head = DENSE_MAGIC + bytes([DENSE_VERSION]) + struct.pack("<QQ", *a.shape)
    return head + a.astype("<f8").tobytes(order="C")


def dense_from_bytes(buf, offset=0):
    """Decode one binary dense matrix; returns ``(array, next_offset)``."""
    if buf[offset : offset + 4] != DENSE_MAGIC:
        raise ValidationError("bad dense matrix magic")
    if buf[offset + 4] != DENSE_VERSION:
        raise ValidationError(f"unsupported dense matrix version {buf[offset + 4]}")
    rows, cols = struct.unpack_from("<QQ", buf, offset + 5)
    start = offset + 21
    end = start + 8 * rows * cols
    if end > len(buf):
        raise ValidationError("truncated dense matrix payload")
    arr = np.frombuffer(buf[start:end], dtype="<f8").astype(np.float64).reshape(rows, cols)
    return as_dense(arr), end


def write_dense_binary(path, a):
    Path(path).write_bytes(dense_to_bytes(a))


def read_dense_binary(path) -> np.ndarray:
    arr, end = dense_from_bytes(Path(path).read_bytes())
    return arr
