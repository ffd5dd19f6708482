import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rwmvc.errors import DegenerateInputError, InvalidParameterError, ShapeError
from rwmvc.numerics import make_rng, matrix_power, pairwise_cosine, pairwise_sq_euclidean, row_softmax

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def naive_power(M, t):
    out = np.eye(M.shape[0])
    for _ in range(t):
        out = out @ M
    return out


@pytest.mark.parametrize("c", [-3.0, 0.0, 7.5])
def test_row_softmax_single_column(c):
    assert row_softmax([[c]], 0.3).tolist() == [[1.0]]


def test_row_softmax_examples():
    np.testing.assert_allclose(row_softmax([[0.0, 0.0]], 0.5), [[0.5, 0.5]])
    e2 = math.exp(2)
    np.testing.assert_allclose(row_softmax([[1.0, 0.0]], 0.5), [[e2 / (e2 + 1), 1 / (e2 + 1)]], atol=1e-15)
    np.testing.assert_allclose(row_softmax([[1.0, 0.0]], 0.5), [[0.880797, 0.119203]], atol=1e-6)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_row_softmax_rejects_bad_tau(tau):
    with pytest.raises(InvalidParameterError):
        row_softmax([[1.0]], tau)


def test_row_softmax_small_tau_no_overflow():
    P = row_softmax([[1.0, -1.0, 0.5]], 1e-4)
    assert np.all(np.isfinite(P))
    np.testing.assert_allclose(P, [[1.0, 0.0, 0.0]])


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       st.floats(0.05, 5.0))
def test_row_softmax_rows_sum_to_one(S, tau):
    P = row_softmax(S, tau)
    assert np.all(P >= 0)
    assert np.all(np.abs(P.sum(axis=1) - 1.0) <= 1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       arrays(np.float64, 6, elements=finite), st.floats(0.1, 5.0))
def test_row_softmax_shift_invariance(S, shift, tau):
    c = shift[: S.shape[0], None]
    np.testing.assert_allclose(row_softmax(S + c, tau), row_softmax(S, tau), atol=1e-12)


def test_matrix_power_zero_is_identity(rng):
    M = rng.random((5, 5))
    assert np.array_equal(matrix_power(M, 0), np.eye(5))


def test_matrix_power_rank_one_stochastic():
    M = np.full((2, 2), 0.5)
    np.testing.assert_allclose(matrix_power(M, 7), naive_power(M, 7))
    np.testing.assert_allclose(matrix_power(M, 7), M)


def test_matrix_power_matches_naive_random(rng):
    M = rng.random((4, 4))
    np.testing.assert_allclose(matrix_power(M, 5), naive_power(M, 5), atol=1e-10)


@settings(max_examples=40)
@given(st.integers(1, 16), st.integers(0, 10), st.integers(0, 2**31))
def test_matrix_power_property(n, t, seed):
    M = make_rng(seed).random((n, n))
    M /= M.sum(axis=1, keepdims=True)
    assert np.max(np.abs(matrix_power(M, t) - naive_power(M, t))) <= 1e-10


def test_matrix_power_rejects_non_square():
    with pytest.raises(ShapeError):
        matrix_power(np.ones((2, 3)), 2)


def test_pairwise_cosine_examples():
    assert pairwise_cosine([[1.0, 0.0]], [[1.0, 0.0]]).tolist() == [[1.0]]
    assert pairwise_cosine([[1.0, 0.0]], [[0.0, 1.0]]).tolist() == [[0.0]]
    np.testing.assert_allclose(pairwise_cosine([[1.0, 1.0]], [[1.0, 0.0]]), [[1 / math.sqrt(2)]], atol=1e-15)


def test_pairwise_cosine_zero_row():
    with pytest.raises(DegenerateInputError):
        pairwise_cosine([[0.0, 0.0]], [[1.0, 0.0]])


def test_pairwise_cosine_unit_diagonal_and_range(rng):
    A = rng.standard_normal((9, 5))
    C = pairwise_cosine(A, A)
    np.testing.assert_allclose(np.diag(C), 1.0, atol=1e-12)
    assert C.min() >= -1 and C.max() <= 1


def test_pairwise_sq_euclidean_examples(rng):
    assert pairwise_sq_euclidean([[0.0, 0.0]], [[3.0, 4.0]]).tolist() == [[25.0]]
    A = rng.standard_normal((7, 3))
    D = pairwise_sq_euclidean(A, A)
    assert np.all(np.diag(D) == 0)
    assert np.array_equal(D, D.T)


def test_pairwise_sq_euclidean_loop_oracle(rng):
    A = rng.standard_normal((6, 4))
    B = rng.standard_normal((5, 4))
    oracle = np.array([[sum((a - b) ** 2) for b in B] for a in A])
    np.testing.assert_allclose(pairwise_sq_euclidean(A, B), oracle, atol=1e-10)


def test_pairwise_sq_euclidean_shape_mismatch():
    with pytest.raises(ShapeError):
        pairwise_sq_euclidean(np.ones((2, 3)), np.ones((2, 2)))


def test_rng_streams_are_reproducible():
    a = make_rng(5, 1).random(4)
    assert np.array_equal(a, make_rng(5, 1).random(4))
    assert not np.array_equal(a, make_rng(5, 2).random(4))
