"""Derivatives of triangularized post-arrays.

Given a pre-array ``A(theta)`` and its parameter derivatives, the functions
here compute the post-array of one orthogonal triangularization together
with the derivatives of its uniquely determined blocks, without ever
differentiating the orthogonal factor itself. ``Q`` is computed once from
the value array and reused for every parameter direction.

Block layout for a pre-array with ``s + k`` rows and ``s + l`` columns::

    upper:  Q A = [[R11, R12],      lower:  Q A = [[0,   L12],
                   [0,   R22]]                     [L21, L22]]
            R11: s x s (rows 0..s)          L21: s x s (rows k..k+s)

Derivatives of ``R22`` and ``L12`` are not determined by ``A`` (any rotation
of those rows is admissible) and are not computed.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, SingularPostArray
from .triarray import lower_sweep, split_ldu, upper_sweep

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ArrayPartition:
    """Block sizes of a pre-array: ``(s + k) x (s + l)``."""

    s: int
    k: int
    l: int

    @classmethod
    def from_shape(cls, shape, s):
        rows, cols = shape
        if s < 1 or rows < s or cols < s:
            raise DimensionMismatch(f"s={s} incompatible with pre-array shape {shape}")
        return cls(s, rows - s, cols - s)


@dataclass
class UpperDerivative:
    Q: np.ndarray
    R: np.ndarray
    dR11: np.ndarray  # (p, s, s)
    dR12: np.ndarray  # (p, s, l)
    part: ArrayPartition

    def full_derivative(self):
        """Post-array derivative with the undetermined ``R22`` block zero-padded."""
        s = self.part.s
        p = self.dR11.shape[0]
        dP = np.zeros((p,) + self.R.shape)
        dP[:, :s, :s] = self.dR11
        dP[:, :s, s:] = self.dR12
        return dP


@dataclass
class LowerDerivative:
    Q: np.ndarray
    L: np.ndarray
    dL21: np.ndarray  # (p, s, s)
    dL22: np.ndarray  # (p, s, l)
    part: ArrayPartition

    def full_derivative(self):
        """Post-array derivative with the undetermined ``L12`` block zero-padded."""
        s, k = self.part.s, self.part.k
        p = self.dL21.shape[0]
        dP = np.zeros((p,) + self.L.shape)
        dP[:, k:, :s] = self.dL21
        dP[:, k:, s:] = self.dL22
        return dP


def _as_stack(A, dA):
    A = np.asarray(A, dtype=float)
    dA = np.asarray(dA, dtype=float)
    if dA.ndim == 2:
        dA = dA[None]
    if dA.shape[1:] != A.shape:
        raise DimensionMismatch(f"derivative stack {dA.shape} does not match pre-array {A.shape}")
    return A, dA


def _sweep(sweep, A, dA, s):
    """One Householder sweep over ``[A | dA_1 .. dA_p | I]``.

    Returns ``Q``, the post-array ``Q A`` and the stack ``Q dA_i``; ``Q`` is
    computed once from the value array and applied to every direction.
    """
    rows, cols = A.shape
    p = dA.shape[0]
    W = np.empty((rows, (p + 1) * cols + rows))
    W[:, :cols] = A
    W[:, cols:(p + 1) * cols] = dA.transpose(1, 0, 2).reshape(rows, p * cols)
    W[:, (p + 1) * cols:] = np.eye(rows)
    sweep(W, s)
    QdA = W[:, cols:(p + 1) * cols].reshape(rows, p, cols).transpose(1, 0, 2)
    return W[:, (p + 1) * cols:], W[:, :cols], QdA


def _check_block(T, post_block, name):
    d = np.abs(np.diagonal(T))
    scale = np.max(np.abs(post_block), initial=0.0)
    if not np.all(np.isfinite(d)) or d.min(initial=np.inf) <= 1e3 * _EPS * scale:
        raise SingularPostArray(f"{name} is numerically singular")


def _right_inverse_product(T, M, lower):
    """``M_i @ inv(T)`` for each ``M_i`` of the stack ``M``, via one triangular solve."""
    p, r, s = M.shape
    # (M_i T^{-1})^T = T^{-T} M_i^T; stack the transposed right-hand sides side by side
    rhs = M.transpose(2, 0, 1).reshape(s, p * r)
    Z = scipy.linalg.solve_triangular(T, rhs, trans="T", lower=lower, check_finite=False)
    return Z.reshape(s, p, r).transpose(1, 2, 0)


def _inv_t_product(T, M, lower):
    """``inv(T).T @ M_i`` for each ``M_i`` of the stack ``M``."""
    p, s, c = M.shape
    rhs = M.transpose(1, 0, 2).reshape(s, p * c)
    Z = scipy.linalg.solve_triangular(T, rhs, trans="T", lower=lower, check_finite=False)
    return Z.reshape(s, p, c).transpose(1, 0, 2)


def post_derivative_upper(A, dA, s):
    """Post-array ``R = Q A`` and derivatives of ``R11``, ``R12``.

    Parameters
    ----------
    A : (s + k, s + l) array
    dA : (p, s + k, s + l) array
        Derivatives of ``A`` with respect to each parameter.
    s : int

    Returns
    -------
    UpperDerivative

    Raises
    ------
    SingularPostArray
        If ``R11`` has a diagonal entry below ``1e3 * eps * max|R11|``.
    """
    A, dA = _as_stack(A, dA)
    part = ArrayPartition.from_shape(A.shape, s)
    Q, R, QdA = _sweep(upper_sweep, A, dA, s)
    R11, R12, R22 = R[:s, :s], R[:s, s:], R[s:, s:]
    p = dA.shape[0]
    if p == 0:
        return UpperDerivative(Q, R, np.zeros((0, s, s)), np.zeros((0, s, part.l)), part)
    _check_block(R11, R11, "R11")

    X, N = QdA[:, :s, :s], QdA[:, :s, s:]
    Y = QdA[:, s:, :s]
    lower, diag, upper = split_ldu(_right_inverse_product(R11, X, lower=False))
    lower_t = lower.transpose(0, 2, 1)
    dR11 = np.triu((lower_t + diag + upper) @ R11)
    dR12 = (lower_t - lower) @ R12 + N
    if part.k:
        dR12 += _inv_t_product(R11, Y.transpose(0, 2, 1), lower=False) @ R22
    return UpperDerivative(Q, R, dR11, dR12, part)


def post_derivative_lower(A, dA, s):
    """Post-array ``L = Q A`` and derivatives of ``L21``, ``L22``.

    Parameters
    ----------
    A : (k + s, s + l) array
    dA : (p, k + s, s + l) array
    s : int

    Returns
    -------
    LowerDerivative

    Raises
    ------
    SingularPostArray
        If ``L21`` has a diagonal entry below ``1e3 * eps * max|L21|``.
    """
    A, dA = _as_stack(A, dA)
    part = ArrayPartition.from_shape(A.shape, s)
    k = part.k
    Q, L, QdA = _sweep(lower_sweep, A, dA, s)
    L12, L21, L22 = L[:k, s:], L[k:, :s], L[k:, s:]
    p = dA.shape[0]
    if p == 0:
        return LowerDerivative(Q, L, np.zeros((0, s, s)), np.zeros((0, s, part.l)), part)
    _check_block(L21, L21, "L21")

    X = QdA[:, :k, :s]
    Y, V = QdA[:, k:, :s], QdA[:, k:, s:]
    lower, diag, upper = split_ldu(_right_inverse_product(L21, Y, lower=True))
    upper_t = upper.transpose(0, 2, 1)
    dL21 = np.tril((upper_t + diag + lower) @ L21)
    dL22 = (upper_t - upper) @ L22 + V
    if k:
        dL22 += _inv_t_product(L21, X.transpose(0, 2, 1), lower=True) @ L12
    return LowerDerivative(Q, L, dL21, dL22, part)


def self_check_norm(A, dA, post, dpost):
    """Largest ``||(A^T A)' - (P^T P)'||_inf`` over the parameter directions.

    ``dpost`` is the full post-array derivative stack (undetermined blocks
    zero-padded, see ``full_derivative``); the check is exact when ``k = 0``.
    """
    A, dA = _as_stack(A, dA)
    post, dpost = _as_stack(post, dpost)
    if post.shape[1] != A.shape[1] or dpost.shape[0] != dA.shape[0]:
        raise DimensionMismatch("pre- and post-array do not match")
    worst = 0.0
    for da, dp in zip(dA, dpost):
        lhs = da.T @ A + A.T @ da
        rhs = dp.T @ post + post.T @ dp
        worst = max(worst, np.linalg.norm(lhs - rhs, np.inf))
    return worst
