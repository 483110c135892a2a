"""Triangular linear algebra and orthogonal triangularization.

Matrices are plain ``numpy`` arrays. Square-root factors follow the
right-factor convention ``S = U.T @ U`` with ``U`` upper triangular.

The two triangularizations are the building blocks of every array filter:
``triangularize_upper`` computes ``Q @ A = R`` with the leading ``s`` columns
of ``R`` upper triangular (QR), ``triangularize_lower`` computes
``Q @ A = L`` with the leading ``s`` columns of ``L`` lower triangular and
pushed to the bottom rows (QL). Both use Householder reflections, return the
orthogonal factor explicitly and write the annihilated entries as exact
zeros.
"""

import math

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix, SingularTriangular

SYM_TOL = 1e-12
ORTH_TOL = 1e-12
SOLVE_TOL = 1e-12

_TINY = np.finfo(float).tiny


def _check_square(M, name="matrix"):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")


def cholesky_upper(S):
    """Upper Cholesky factor ``U`` with ``U.T @ U == S`` and positive diagonal.

    Raises
    ------
    NotPositiveDefinite
        If ``S`` is not symmetric (to ``SYM_TOL`` relative to its scale) or
        a pivot is not positive.
    """
    S = np.asarray(S, dtype=float)
    _check_square(S, "S")
    scale = max(1.0, np.max(np.abs(S), initial=0.0))
    if np.max(np.abs(S - S.T), initial=0.0) > SYM_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(S).T
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def _householder(x, pivot):
    """Reflector ``v`` and target value for zeroing all of ``x`` but ``x[pivot]``.

    ``pivot`` is ``0`` or ``-1``. Returns ``None`` when ``x`` already has the
    required structure.
    """
    rest = x[1:] if pivot == 0 else x[:-1]
    if not rest.any():
        return None
    norm = math.sqrt(x @ x)
    alpha = -norm if x[pivot] >= 0 else norm
    v = x.copy()
    v[pivot] -= alpha
    return v, alpha, 2.0 / (v @ v)


def _check_args(A, s):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch("pre-array must be 2-D")
    rows, cols = A.shape
    if not 1 <= s <= min(rows, cols):
        raise DimensionMismatch(f"s={s} incompatible with pre-array shape {A.shape}")
    return A


def upper_sweep(W, s):
    """In-place Householder QR sweep over the first ``s`` columns of ``W``.

    Columns beyond ``s`` ride along, so appending an identity block yields
    the orthogonal factor and appending derivative blocks yields ``Q @ dA``.
    """
    for j in range(s):
        h = _householder(W[j:, j], 0)
        if h is None:
            continue
        v, alpha, beta = h
        W[j:, j + 1:] -= v[:, None] * (beta * (v @ W[j:, j + 1:]))
        W[j, j] = alpha
        W[j + 1:, j] = 0.0
    return W


def lower_sweep(W, s):
    """In-place Householder QL sweep: ``W[:, :s]`` becomes block lower triangular.

    With ``k = rows - s`` the triangular block occupies rows ``k..k+s``;
    columns are processed right to left.
    """
    k = W.shape[0] - s
    for j in range(s - 1, -1, -1):
        r = k + j
        h = _householder(W[: r + 1, j], -1)
        if h is None:
            continue
        v, alpha, beta = h
        # columns j+1..s-1 are already zero in rows 0..r and stay zero
        W[: r + 1, :] -= v[:, None] * (beta * (v @ W[: r + 1, :]))
        W[:r, j] = 0.0
        W[r, j] = alpha
    return W


def triangularize_upper(A, s):
    """Orthogonal ``Q`` and ``R = Q @ A`` with ``R[:, :s]`` upper triangular.

    Parameters
    ----------
    A : (s + k, s + l) array
    s : int
        Order of the triangular block.

    Returns
    -------
    Q : (s + k, s + k) array
    R : (s + k, s + l) array
        ``R[:s, :s]`` is upper triangular and ``R[s:, :s]`` is exactly zero.
    """
    A = _check_args(A, s)
    rows, cols = A.shape
    W = upper_sweep(np.hstack([A, np.eye(rows)]), s)
    return W[:, cols:], W[:, :cols]


def triangularize_lower(A, s):
    """Orthogonal ``Q`` and ``L = Q @ A`` with ``L[:, :s]`` block lower triangular.

    With ``k = rows - s`` the first ``k`` rows of ``L[:, :s]`` are exactly zero
    and ``L[k:, :s]`` is lower triangular.
    """
    A = _check_args(A, s)
    rows, cols = A.shape
    W = lower_sweep(np.hstack([A, np.eye(rows)]), s)
    return W[:, cols:], W[:, :cols]


def split_ldu(M):
    """Split ``M`` into strictly lower, diagonal and strictly upper parts.

    Works on stacks of square matrices (last two axes).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {M.shape}")
    lower = np.tril(M, -1)
    upper = np.triu(M, 1)
    diag = M - lower - upper
    return lower, diag, upper


def check_triangular_diagonal(T, error=SingularTriangular, name="triangular factor"):
    d = np.abs(np.diagonal(T))
    if d.size and (not np.all(np.isfinite(d)) or d.min() < _TINY):
        raise error(f"{name} has a zero or subnormal diagonal entry")


def tri_solve(T, B, lower=False, mode="left"):
    """Solve a triangular system.

    Parameters
    ----------
    T : (n, n) triangular array
    B : array
    lower : bool
        Orientation of ``T``.
    mode : {"left", "left_t", "right"}
        Solve ``T @ X = B``, ``T.T @ X = B`` or ``X @ T = B`` respectively.

    Raises
    ------
    SingularTriangular
        On a zero or subnormal diagonal entry of ``T``.
    """
    T = np.asarray(T, dtype=float)
    B = np.asarray(B, dtype=float)
    _check_square(T, "T")
    check_triangular_diagonal(T)
    if mode == "left":
        return scipy.linalg.solve_triangular(T, B, lower=lower, check_finite=False)
    if mode == "left_t":
        return scipy.linalg.solve_triangular(T, B, trans="T", lower=lower, check_finite=False)
    if mode == "right":
        return scipy.linalg.solve_triangular(T, B.T, trans="T", lower=lower, check_finite=False).T
    raise ValueError(f"unknown mode {mode!r}")


def inverse_derivative(M, dM):
    """Derivative of ``inv(M)`` along ``dM``: ``-inv(M) @ dM @ inv(M)``.

    ``dM`` may be a stack ``(p, n, n)`` of directions.
    """
    M = np.asarray(M, dtype=float)
    dM = np.asarray(dM, dtype=float)
    _check_square(M, "M")
    if dM.shape[-2:] != M.shape:
        raise DimensionMismatch(f"dM shape {dM.shape} does not match M shape {M.shape}")
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from None
    return -Minv @ dM @ Minv


def cholesky_derivative(U, dS):
    """Derivative of the upper Cholesky factor ``U`` of ``S`` along symmetric ``dS``.

    With ``W = U^{-T} dS U^{-1}`` the result is ``Phi(W) @ U`` where ``Phi``
    keeps the strictly upper part of ``W`` and half its diagonal, so that
    ``dU.T @ U + U.T @ dU == dS`` and ``dU`` stays upper triangular.
    ``dS`` may be a stack ``(p, n, n)``.
    """
    U = np.asarray(U, dtype=float)
    dS = np.asarray(dS, dtype=float)
    _check_square(U, "U")
    if dS.shape[-2:] != U.shape:
        raise DimensionMismatch(f"dS shape {dS.shape} does not match U shape {U.shape}")
    check_triangular_diagonal(U)
    n = U.shape[0]
    batch = dS.reshape(-1, n, n)
    out = np.empty_like(batch)
    for i, D in enumerate(batch):
        # W = U^{-T} D U^{-1}, formed as two triangular solves
        Y = scipy.linalg.solve_triangular(U, D, trans="T", check_finite=False)
        W = scipy.linalg.solve_triangular(U, Y.T, trans="T", check_finite=False).T
        phi = np.triu(W, 1) + 0.5 * np.diag(np.diag(W))
        out[i] = np.triu(phi @ U)
    return out.reshape(dS.shape)


def row_signs(post, s, lower=False):
    """Signs of the triangular-block diagonal of a post-array, one per row.

    Rows outside the triangular block get ``+1``.
    """
    rows = post.shape[0]
    signs = np.ones(rows)
    offset = rows - s if lower else 0
    d = np.diagonal(post[offset:offset + s, :s])
    signs[offset:offset + s] = np.where(d < 0, -1.0, 1.0)
    return signs


def normalize_signs(post, derivs=(), target=None, s=None, lower=False):
    """Rescale post-array rows by ``+-1`` so the triangular diagonal has given signs.

    Parameters
    ----------
    post : (rows, cols) array
    derivs : sequence of arrays
        Derivatives covering the leading rows (upper case) or the trailing
        rows (lower case) of ``post``; each is rescaled by the same row signs.
    target : (rows,) array of +-1, optional
        Desired signs. Defaults to all positive.
    s : int
        Triangular block order; defaults to ``min(post.shape)``.
    """
    post = np.asarray(post, dtype=float)
    rows = post.shape[0]
    if s is None:
        s = min(post.shape)
    D = row_signs(post, s, lower)
    if target is not None:
        D = D * np.asarray(target, dtype=float)
    out = [D[:, None] * post]
    for d in derivs:
        d = np.asarray(d, dtype=float)
        nr = d.shape[-2]
        # derivative blocks cover the leading (upper) or trailing (lower) rows
        Dd = D[rows - nr:] if lower else D[:nr]
        out.append(Dd[:, None] * d)
    return out[0] if not derivs else tuple(out)
