import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgaction import _accel
from kgaction.errors import DimensionError, NumericError, ValidationError
from kgaction.numerics import (
    AdamState,
    SparseMatrix,
    adam_step,
    as_dense,
    dense_from_bytes,
    dense_to_bytes,
    finite_difference_grad,
    matmul,
    matmul_tn,
    read_dense_binary,
    read_dense_text,
    relu,
    relu_backward,
    spmm,
    write_dense_binary,
    write_dense_text,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def square(max_n=8):
    return st.integers(1, max_n).flatmap(lambda n: arrays(np.float64, (n, n), elements=finite))


def test_as_dense_rejects_nan_with_index():
    with pytest.raises(NumericError, match=r"\(1, 0\)"):
        as_dense([[1.0, 2.0], [np.nan, 0.0]])


def test_as_dense_rejects_3d():
    with pytest.raises(DimensionError):
        as_dense(np.zeros((2, 2, 2)))


def test_from_coo_sorts_and_rejects_duplicates():
    s = SparseMatrix.from_coo(3, [2, 0, 0], [1, 2, 0], [5.0, 2.0, 1.0])
    assert s.row_offsets.tolist() == [0, 2, 2, 3]
    assert s.col_indices.tolist() == [0, 2, 1]
    with pytest.raises(ValidationError, match="duplicate"):
        SparseMatrix.from_coo(2, [0, 0], [1, 1], [1.0, 2.0])


def test_sparse_validation():
    with pytest.raises(ValidationError):
        SparseMatrix(2, np.array([0, 1]), np.array([0]), np.array([1.0]))
    with pytest.raises(ValidationError):
        SparseMatrix(2, np.array([0, 1, 1]), np.array([5]), np.array([1.0]))


def test_identity_and_empty():
    assert np.array_equal(SparseMatrix.identity(3).to_dense(), np.eye(3))
    assert SparseMatrix.empty(4).nnz == 0


def test_transpose_and_symmetry():
    a = np.array([[0, 1.0, 0], [0, 0, 2.0], [0, 0, 0]])
    s = SparseMatrix.from_dense(a)
    assert np.array_equal(s.transpose().to_dense(), a.T)
    assert not s.is_symmetric()
    assert SparseMatrix.from_dense(a + a.T).is_symmetric()


@settings(max_examples=60, deadline=None)
@given(square(), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_spmm_matches_dense(a, d, seed):
    b = np.random.default_rng(seed).normal(size=(a.shape[0], d))
    got = spmm(SparseMatrix.from_dense(a), b)
    assert np.allclose(got, a @ b, rtol=1e-12, atol=1e-9)


def test_spmm_hand_example():
    s = SparseMatrix.from_coo(2, [0, 1], [1, 0], [2.0, 3.0])
    assert spmm(s, np.array([[1.0], [4.0]])).tolist() == [[8.0], [3.0]]


def test_matmul_dimension_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_tn():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    assert np.allclose(matmul_tn(a, b), a.T @ b, rtol=1e-13)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable")
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_backends_bit_identical(n, k, p, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, p))
    assert np.array_equal(_accel.matmul_numpy(a, b), _accel.matmul_numba(a, b))
    sq = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.4)
    s = SparseMatrix.from_dense(sq)
    x = rng.normal(size=(n, p))
    assert np.array_equal(
        _accel.spmm_numpy(s.row_offsets, s.col_indices, s.values, x),
        _accel.spmm_numba(s.row_offsets, s.col_indices, s.values, x),
    )
    assert np.array_equal(_accel.row_norms_numpy(a), _accel.row_norms_numba(a))


def test_relu_and_backward_at_zero():
    x = np.array([[-1.0, 0.0, 2.0]])
    assert relu(x).tolist() == [[0.0, 0.0, 2.0]]
    # the derivative at exactly zero is taken as zero
    assert relu_backward(x, np.ones_like(x)).tolist() == [[0.0, 0.0, 1.0]]


def test_adam_first_step_is_signed_lr():
    # after one bias-corrected step m_hat = g and v_hat = g^2
    g = np.array([[0.5, -2.0, 0.0]])
    state = AdamState.zeros_like(g)
    new = adam_step(np.zeros_like(g), g, state, 0.1)
    expected = -0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(new, expected, rtol=0, atol=1e-15)
    assert state.step_count == 1


def test_adam_second_step_hand_computed():
    state = AdamState.zeros_like(np.zeros((1, 1)))
    p = adam_step(np.zeros((1, 1)), np.ones((1, 1)), state, 0.01)
    p = adam_step(p, np.full((1, 1), 3.0), state, 0.01)
    m = 0.9 * 0.1 + 0.1 * 3.0
    v = 0.999 * 0.001 + 0.001 * 9.0
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999**2)
    first = -0.01 / (1.0 + 1e-8)
    assert p[0, 0] == pytest.approx(first - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8), rel=1e-12)


def test_adam_errors():
    s = AdamState.zeros_like(np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        adam_step(np.zeros((2, 2)), np.zeros((2, 2)), s, 0.0)
    with pytest.raises(DimensionError):
        adam_step(np.zeros((2, 2)), np.zeros((2, 3)), s, 0.1)
    with pytest.raises(NumericError, match=r"\(0, 1\)"):
        adam_step(np.zeros((2, 2)), np.array([[0, np.inf], [0, 0]]), s, 0.1)


def test_finite_difference_on_quadratic():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    grad = finite_difference_grad(lambda w: float(np.sum(w * w)), a)
    assert np.allclose(grad, 2 * a, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6).flatmap(lambda r: st.integers(0, 6).flatmap(
    lambda c: arrays(np.float64, (r, c), elements=st.floats(allow_nan=False, allow_infinity=False)))))
def test_dense_binary_round_trip(a):
    buf = dense_to_bytes(a)
    back, end = dense_from_bytes(buf)
    assert end == len(buf)
    assert back.shape == a.shape and np.array_equal(back, a)


def test_dense_files_round_trip(tmp_path):
    a = np.array([[1.5, -2.25e-300], [1e300, 0.1]])
    write_dense_text(tmp_path / "a.txt", a)
    write_dense_binary(tmp_path / "a.bin", a)
    assert np.array_equal(read_dense_text(tmp_path / "a.txt"), a)
    assert np.array_equal(read_dense_binary(tmp_path / "a.bin"), a)


def test_dense_binary_rejects_bad_magic():
    with pytest.raises(ValidationError):
        dense_from_bytes(b"XXXX" + bytes(20))
