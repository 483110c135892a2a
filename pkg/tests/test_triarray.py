import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqrtkf.errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix, SingularTriangular
from sqrtkf.triarray import (cholesky_derivative, cholesky_upper, inverse_derivative,
                             normalize_signs, split_ldu, tri_solve, triangularize_lower,
                             triangularize_upper)


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))


def inf_norm(M):
    return np.linalg.norm(M, np.inf)


# -- cholesky_upper -----------------------------------------------------------


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky_upper(np.eye(3)), np.eye(3))


def test_cholesky_2x2_by_hand():
    U = cholesky_upper(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(U, [[2.0, 1.0], [0.0, 2.0]], atol=1e-15)


def test_cholesky_random_reconstruction():
    rng = np.random.default_rng(0)
    for n in (1, 3, 7, 12):
        S = random_spd(rng, n) / n
        U = cholesky_upper(S)
        assert np.all(np.tril(U, -1) == 0)
        assert np.all(np.diagonal(U) > 0)
        assert inf_norm(U.T @ U - S) <= 1e-12 * max(1.0, inf_norm(S))


def test_cholesky_rejects_indefinite_and_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        cholesky_upper(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        cholesky_upper(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(DimensionMismatch):
        cholesky_upper(np.ones((2, 3)))


# -- triangularization -----------------------------------------------------------


@pytest.mark.parametrize("shape, s", [((5, 4), 4), ((3, 4), 3), ((6, 6), 3), ((4, 7), 2), ((1, 1), 1)])
def test_triangularize_upper_structure_and_squaring(shape, s):
    rng = np.random.default_rng(sum(shape) + s)
    A = rng.uniform(-10, 10, shape)
    Q, R = triangularize_upper(A, s)
    assert np.all(np.tril(R[:, :s], -1) == 0.0)  # bit-zero below the diagonal
    assert inf_norm(Q @ Q.T - np.eye(shape[0])) <= 1e-12
    assert inf_norm(R.T @ R - A.T @ A) <= 1e-12 * max(1.0, inf_norm(A.T @ A))
    np.testing.assert_allclose(Q @ A, R, atol=1e-12 * inf_norm(A))


@pytest.mark.parametrize("shape, s", [((3, 4), 3), ((5, 4), 3), ((6, 6), 6), ((4, 7), 2)])
def test_triangularize_lower_structure_and_squaring(shape, s):
    rng = np.random.default_rng(10 * sum(shape) + s)
    A = rng.uniform(-10, 10, shape)
    Q, L = triangularize_lower(A, s)
    k = shape[0] - s
    assert np.all(L[:k, :s] == 0.0)
    assert np.all(np.triu(L[k:, :s], 1) == 0.0)
    assert inf_norm(Q @ Q.T - np.eye(shape[0])) <= 1e-12
    assert inf_norm(L.T @ L - A.T @ A) <= 1e-12 * max(1.0, inf_norm(A.T @ A))


def test_triangular_input_is_a_fixed_point():
    U = np.array([[2.0, 1.0, 3.0, 0.5], [0.0, 1.5, -1.0, 2.0], [0.0, 0.0, 0.7, 1.0]])
    Q, R = triangularize_upper(U, 3)
    np.testing.assert_array_equal(Q, np.eye(3))
    np.testing.assert_array_equal(R, U)
    L = np.array([[2.0, 0.0, 0.0, 1.0], [1.0, 1.5, 0.0, -2.0], [0.3, -1.0, 0.7, 0.0]])
    Q, P = triangularize_lower(L, 3)
    np.testing.assert_array_equal(Q, np.eye(3))
    np.testing.assert_array_equal(P, L)


def test_zero_columns_are_legal():
    A = np.zeros((4, 3))
    A[0, 2] = 1.0
    Q, R = triangularize_upper(A, 2)
    np.testing.assert_array_equal(R[:, :2], 0.0)
    assert inf_norm(R.T @ R - A.T @ A) == 0.0


def test_triangularize_dimension_checks():
    with pytest.raises(DimensionMismatch):
        triangularize_upper(np.ones((2, 3)), 3)
    with pytest.raises(DimensionMismatch):
        triangularize_lower(np.ones((3, 2)), 3)
    with pytest.raises(DimensionMismatch):
        triangularize_upper(np.ones((3, 3)), 0)


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 20), extra=st.integers(0, 5), s_frac=st.floats(0.05, 1.0),
       seed=st.integers(0, 2**32 - 1), lower=st.booleans())
def test_squaring_identity_property(rows, extra, s_frac, seed, lower):
    s = max(1, int(round(s_frac * rows)))
    cols = min(s + extra, 20)
    A = np.random.default_rng(seed).uniform(-10, 10, (rows, cols))
    Q, P = (triangularize_lower if lower else triangularize_upper)(A, s)
    assert inf_norm(Q @ Q.T - np.eye(rows)) <= 1e-12
    assert inf_norm(P.T @ P - A.T @ A) <= 1e-12 * max(1.0, inf_norm(A.T @ A))


# -- split_ldu -----------------------------------------------------------


def test_split_ldu_identity():
    lo, d, up = split_ldu(np.eye(3))
    np.testing.assert_array_equal(lo, 0)
    np.testing.assert_array_equal(d, np.eye(3))
    np.testing.assert_array_equal(up, 0)


@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_split_ldu_reassembles_bitwise(n, seed):
    M = np.random.default_rng(seed).standard_normal((n, n))
    lo, d, up = split_ldu(M)
    assert np.array_equal(lo + d + up, M)
    assert np.all(np.triu(lo) == 0) and np.all(np.tril(up) == 0)
    assert np.array_equal(d, np.diag(np.diagonal(M)))


def test_split_ldu_rejects_rectangular():
    with pytest.raises(DimensionMismatch):
        split_ldu(np.ones((2, 3)))


# -- tri_solve -----------------------------------------------------------


def test_tri_solve_by_hand():
    T = np.array([[2.0, 1.0], [0.0, 2.0]])
    np.testing.assert_allclose(tri_solve(T, np.array([[5.0], [4.0]])), [[1.5], [2.0]])
    B = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(tri_solve(np.eye(2), B), B)


@pytest.mark.parametrize("mode", ["left", "left_t", "right"])
@pytest.mark.parametrize("lower", [False, True])
def test_tri_solve_residual(mode, lower):
    rng = np.random.default_rng(7)
    T = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    T = np.tril(T) if lower else np.triu(T)
    B = rng.standard_normal((5, 3)) if mode != "right" else rng.standard_normal((3, 5))
    X = tri_solve(T, B, lower=lower, mode=mode)
    if mode == "left":
        lhs = T @ X
    elif mode == "left_t":
        lhs = T.T @ X
    else:
        lhs = X @ T
    assert inf_norm(lhs - B) <= 1e-12 * inf_norm(B)


def test_tri_solve_singular():
    T = np.array([[1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(SingularTriangular):
        tri_solve(T, np.ones(2))
    with pytest.raises(SingularTriangular):
        tri_solve(np.array([[1.0, 0.0], [0.0, 1e-320]]), np.ones(2))


# -- derivative helpers -----------------------------------------------------------


def test_inverse_derivative_trivial():
    D = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(inverse_derivative(np.eye(3), D), -D)
    np.testing.assert_allclose(inverse_derivative(np.diag([2.0, 4.0]), np.eye(2)), np.diag([-0.25, -0.0625]))


def test_inverse_derivative_fd():
    rng = np.random.default_rng(3)
    M0 = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    M1 = rng.standard_normal((4, 4))
    h = 1e-5
    fd = (np.linalg.inv(M0 + h * M1) - np.linalg.inv(M0 - h * M1)) / (2 * h)
    an = inverse_derivative(M0, M1)
    assert np.max(np.abs(an - fd)) <= 1e-6 * np.max(np.abs(an))


def test_inverse_derivative_singular():
    with pytest.raises(SingularMatrix):
        inverse_derivative(np.ones((2, 2)), np.eye(2))


def test_cholesky_derivative_trivial():
    np.testing.assert_allclose(cholesky_derivative(3 * np.eye(3), 6 * np.eye(3)), np.eye(3))
    U = cholesky_upper(random_spd(np.random.default_rng(1), 3))
    np.testing.assert_array_equal(cholesky_derivative(U, np.zeros((3, 3))), 0.0)


def test_cholesky_derivative_fd_and_product_rule():
    rng = np.random.default_rng(5)
    S0 = random_spd(rng, 4) / 4
    S1 = rng.standard_normal((4, 4))
    S1 = S1 + S1.T
    U = cholesky_upper(S0)
    dU = cholesky_derivative(U, S1)
    assert np.all(np.tril(dU, -1) == 0)
    assert inf_norm(dU.T @ U + U.T @ dU - S1) <= 1e-12 * max(1.0, inf_norm(S1))
    h = 1e-5
    fd = (cholesky_upper(S0 + h * S1) - cholesky_upper(S0 - h * S1)) / (2 * h)
    assert np.max(np.abs(dU - fd)) <= 1e-6 * np.max(np.abs(dU))


def test_derivative_helpers_accept_stacks():
    rng = np.random.default_rng(2)
    S = random_spd(rng, 3)
    U = cholesky_upper(S)
    dS = rng.standard_normal((2, 3, 3))
    dS = dS + dS.transpose(0, 2, 1)
    stacked = cholesky_derivative(U, dS)
    for i in range(2):
        np.testing.assert_allclose(stacked[i], cholesky_derivative(U, dS[i]), rtol=0, atol=1e-14)
    M = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    dM = rng.standard_normal((2, 3, 3))
    stacked = inverse_derivative(M, dM)
    for i in range(2):
        np.testing.assert_allclose(stacked[i], inverse_derivative(M, dM[i]), rtol=0, atol=1e-13)


def test_normalize_signs_makes_diagonal_positive():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((4, 5))
    _, R = triangularize_upper(A, 4)
    Rn, dn = normalize_signs(R, [R[:2]], s=4)
    assert np.all(np.diagonal(Rn[:, :4]) > 0)
    np.testing.assert_array_equal(np.abs(Rn), np.abs(R))
    np.testing.assert_array_equal(dn, Rn[:2])
    target = np.array([-1.0, 1.0, -1.0, 1.0])
    Rt = normalize_signs(R, target=target, s=4)
    np.testing.assert_array_equal(np.sign(np.diagonal(Rt[:, :4])), target)
