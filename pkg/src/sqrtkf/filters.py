"""Kalman filter engines with optional parameter sensitivities.

Three interchangeable engines process one measurement per step:

``conventional``
    The textbook covariance recursion with its sensitivity equations
    obtained by the product rule. Kept deliberately naive (no Joseph form):
    it is the reference that breaks down on ill-conditioned problems.
``esrcf``
    Extended square-root covariance filter. Propagates the upper factor
    ``S`` of ``P = S.T @ S`` and the normalized state ``S^{-T} x`` through
    one upper triangularization per step.
``esrif``
    Extended square-root information filter. Propagates ``P^{-T/2}`` and the
    same normalized state through one lower triangularization per step;
    needs an invertible ``F``.

A state created with ``sensitivity=True`` carries derivatives with respect
to every parameter, and each step then also returns the derivatives of the
innovation quantities. Derivative stacks keep the parameter index first.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import FilterFailure, InnovationCovSingular, SingularMatrix
from .model import ModelEval
from .sensitivity import post_derivative_lower, post_derivative_upper
from .triarray import (check_triangular_diagonal, inverse_derivative, triangularize_lower,
                       triangularize_upper)


def _solve_tri(T, b, lower=False, trans="N"):
    return scipy.linalg.solve_triangular(T, b, lower=lower, trans=trans, check_finite=False)


@dataclass
class StepOutput:
    """Innovation data of one step.

    ``factor`` is ``R_e`` (conventional), the upper factor ``R_e^{1/2}``
    (esrcf) or the lower factor ``R_e^{-T/2}`` (esrif); ``innovation`` is
    ``e`` (conventional) or the normalized ``R_e^{-T/2} e`` (square-root
    engines). ``gain`` is ``K_p`` (conventional), the normalized gain
    ``F P H^T R_e^{-1/2}`` (esrcf) or the block ``-P_{k+1}^{-T/2} K_p``
    (esrif). ``residual`` holds the post-array rows that are by-products of
    the triangularization and never used downstream.
    """

    kind: str
    innovation: np.ndarray
    factor: np.ndarray
    x_next: np.ndarray
    d_innovation: Optional[np.ndarray] = None
    d_factor: Optional[np.ndarray] = None
    gain: Optional[np.ndarray] = None
    residual: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# conventional filter


@dataclass
class ConvFilterState:
    x: np.ndarray
    P: np.ndarray
    dx: Optional[np.ndarray] = None
    dP: Optional[np.ndarray] = None

    @property
    def xhat(self):
        return self.x


def kf_init(model: ModelEval, sensitivity=False):
    if sensitivity:
        return ConvFilterState(model.x0.copy(), model.P0.copy(), model.dx0.copy(), model.dP0.copy())
    return ConvFilterState(model.x0.copy(), model.P0.copy())


def kf_step(state: ConvFilterState, model: ModelEval, z, u=None):
    """One step of the conventional filter; sensitivities if the state has them.

    Raises
    ------
    InnovationCovSingular
        If ``R_e = H P H^T + R`` is singular or indefinite in working precision.
    """
    F, G, H = model.F, model.G, model.H
    x, P = state.x, state.P
    e = z - H @ x
    PHt = P @ H.T
    Re = H @ PHt + model.R
    sign, logdet = np.linalg.slogdet(Re)
    if not (sign > 0 and np.isfinite(logdet)):
        raise InnovationCovSingular("innovation covariance is not positive definite")
    try:
        K = np.linalg.solve(Re.T, (F @ PHt).T).T
    except np.linalg.LinAlgError as exc:
        raise InnovationCovSingular(str(exc)) from None
    x_next = F @ x + K @ e
    Bu = None
    if u is not None and model.d:
        Bu = model.B @ u
        if Bu.any():
            x_next = x_next + Bu
    GQGt = G @ model.Q @ G.T
    P_next = F @ P @ F.T + GQGt - K @ Re @ K.T
    P_next = 0.5 * (P_next + P_next.T)
    out = StepOutput("conventional", e, Re, x_next, gain=K)
    if state.dx is None:
        return ConvFilterState(x_next, P_next), out

    dF, dG, dH, dQ, dR = model.dF, model.dG, model.dH, model.dQ, model.dR
    dx, dP = state.dx, state.dP
    dHt = dH.transpose(0, 2, 1)
    dFt = dF.transpose(0, 2, 1)
    dRe = dH @ PHt + H @ dP @ H.T + (H @ P) @ dHt + dR
    de = -(dH @ x) - dx @ H.T
    dFPHt = dF @ PHt + F @ dP @ H.T + (F @ P) @ dHt
    # dK = (d(F P H^T) - K dRe) Re^{-1}
    rhs = dFPHt - K @ dRe
    dK = np.linalg.solve(Re.T, rhs.transpose(0, 2, 1)).transpose(0, 2, 1)
    dx_next = dx @ F.T + dF @ x + dK @ e + de @ K.T
    if Bu is not None and model.dB.any():
        dx_next = dx_next + model.dB @ u
    FP = F @ P
    dP_next = (dF @ P @ F.T + F @ dP @ F.T + FP @ dFt
               + dG @ model.Q @ G.T + G @ dQ @ G.T + (G @ model.Q) @ dG.transpose(0, 2, 1)
               - dK @ Re @ K.T - K @ dRe @ K.T - (K @ Re) @ dK.transpose(0, 2, 1))
    dP_next = 0.5 * (dP_next + dP_next.transpose(0, 2, 1))
    out.d_innovation = de
    out.d_factor = dRe
    return ConvFilterState(x_next, P_next, dx_next, dP_next), out


def kf_sensitivity_step(state, model, z, u=None):
    if state.dx is None:
        raise ValueError("state carries no sensitivities; use kf_init(..., sensitivity=True)")
    return kf_step(state, model, z, u)


# ---------------------------------------------------------------------------
# extended square-root covariance filter


@dataclass
class SqrtCovState:
    """``P = sqrtP.T @ sqrtP`` with ``sqrtP`` upper; ``norm = sqrtP^{-T} x``."""

    sqrtP: np.ndarray
    norm: np.ndarray
    d_sqrtP: Optional[np.ndarray] = None
    d_norm: Optional[np.ndarray] = None

    @property
    def xhat(self):
        return self.sqrtP.T @ self.norm

    @property
    def P(self):
        return self.sqrtP.T @ self.sqrtP


def esrcf_init(model: ModelEval, sensitivity=False):
    S = model.sqrt_P0
    norm = _solve_tri(S, model.x0, trans="T")
    if not sensitivity:
        return SqrtCovState(S, norm)
    dS = model.d_sqrt_P0
    # d(S^{-T} x0) = S^{-T} (dx0 - dS^T S^{-T} x0)
    rhs = model.dx0 - dS.transpose(0, 2, 1) @ norm
    dnorm = _solve_tri(S, rhs.T, trans="T").T
    return SqrtCovState(S, norm, dS, dnorm)


def _normalized_input(S, dS, Bu, dBu):
    """``S^{-T} Bu`` and its derivatives for upper ``S``."""
    c = _solve_tri(S, Bu, trans="T")
    if dS is None:
        return c, None
    rhs = dBu - dS.transpose(0, 2, 1) @ c
    return c, _solve_tri(S, rhs.T, trans="T").T


def _esrcf_template(model):
    """Step-independent parts of the eSRCF pre-array and its derivatives."""
    c = model.cache.get("esrcf")
    if c is None:
        n, m, q, p = model.n, model.m, model.q, model.p
        s = m + n
        A = np.zeros((s + q, s + 1))
        A[:m, :m] = model.sqrt_R
        dA = np.zeros((p,) + A.shape)
        if q:
            A[s:, m:s] = model.sqrt_Q @ model.G.T
        c = {"A": A, "dA": dA, "Ht": model.H.T, "Ft": model.F.T}
        if p:
            dA[:, :m, :m] = model.d_sqrt_R
            if q:
                dA[:, s:, m:s] = (model.d_sqrt_Q @ model.G.T
                                  + model.sqrt_Q @ model.dG.transpose(0, 2, 1))
            c["dRs_t"] = model.d_sqrt_R.transpose(0, 2, 1)
            c["dHt"] = model.dH.transpose(0, 2, 1)
            c["dFt"] = model.dF.transpose(0, 2, 1)
        model.cache["esrcf"] = c
    return c


def esrcf_step(state: SqrtCovState, model: ModelEval, z, u=None):
    """One eSRCF step (with sensitivities if the state carries them).

    The pre-array rows are ``[R^{1/2}, 0, -R^{-T/2} z]``,
    ``[S H^T, S F^T, S^{-T} x]`` and ``[0, Q^{1/2} G^T, 0]``; after upper
    triangularization with ``s = m + n`` the post-array holds
    ``[R_e^{1/2}, Kbar^T, -ebar]`` and ``[0, S_next, S_next^{-T} x_next]``.
    """
    n, m = model.n, model.m
    S, norm = state.sqrtP, state.norm
    Rs = model.sqrt_R
    s = m + n
    c = _esrcf_template(model)
    A = c["A"].copy()
    w = _solve_tri(Rs, z, trans="T")
    A[:m, -1] = -w
    A[m:s, :m] = S @ c["Ht"]
    A[m:s, m:s] = S @ c["Ft"]
    A[m:s, -1] = norm

    sens = state.d_sqrtP is not None
    if sens:
        dS = state.d_sqrtP
        dA = c["dA"].copy()
        # d(-Rs^{-T} z) = Rs^{-T} dRs^T Rs^{-T} z
        dA[:, :m, -1] = _solve_tri(Rs, (c["dRs_t"] @ w).T, trans="T").T
        dA[:, m:s, :m] = dS @ c["Ht"] + S @ c["dHt"]
        dA[:, m:s, m:s] = dS @ c["Ft"] + S @ c["dFt"]
        dA[:, m:s, -1] = state.d_norm
        res = post_derivative_upper(A, dA, s)
        R = res.R
    else:
        _, R = triangularize_upper(A, s)

    Re_sqrt = R[:m, :m]
    S_next = R[m:s, m:s]
    norm_next = R[m:s, -1].copy()
    out = StepOutput("esrcf", -R[:m, -1], Re_sqrt, None,
                     gain=R[:m, m:s].T, residual=R[s:, -1])
    dS_next = dnorm_next = None
    if sens:
        out.d_factor = res.dR11[:, :m, :m]
        out.d_innovation = -res.dR12[:, :m, 0]
        dS_next = res.dR11[:, m:, m:]
        dnorm_next = res.dR12[:, m:, 0].copy()

    if u is not None and model.d:
        Bu = model.B @ u
        dBu = model.dB @ u if sens else None
        if Bu.any() or (sens and dBu.any()):
            check_triangular_diagonal(S_next, SingularMatrix, "P^{1/2}")
            cu, dcu = _normalized_input(S_next, dS_next, Bu, dBu)
            norm_next = norm_next + cu
            if sens:
                dnorm_next = dnorm_next + dcu

    new = SqrtCovState(S_next, norm_next, dS_next, dnorm_next)
    out.x_next = new.xhat
    return new, out


def esrcf_sensitivity_step(state, model, z, u=None):
    if state.d_sqrtP is None:
        raise ValueError("state carries no sensitivities; use esrcf_init(..., sensitivity=True)")
    return esrcf_step(state, model, z, u)


# ---------------------------------------------------------------------------
# extended square-root information filter


@dataclass
class SqrtInfoState:
    """``invSqrtP = P^{-T/2}`` (lower triangular); ``norm = P^{-T/2} x``."""

    invSqrtP: np.ndarray
    norm: np.ndarray
    d_invSqrtP: Optional[np.ndarray] = None
    d_norm: Optional[np.ndarray] = None

    @property
    def xhat(self):
        return _solve_tri(self.invSqrtP, self.norm, lower=True)


def _require_invertible_F(model):
    if not model.F_invertible:
        raise SingularMatrix("eSRIF requires invertible F")


def esrif_init(model: ModelEval, sensitivity=False):
    _require_invertible_F(model)
    S = model.sqrt_P0
    Pi = _solve_tri(S, np.eye(model.n), trans="T")  # S^{-T}, lower triangular
    Pi = np.tril(Pi)
    norm = Pi @ model.x0
    if not sensitivity:
        return SqrtInfoState(Pi, norm)
    dPi = np.tril(inverse_derivative(S.T, model.d_sqrt_P0.transpose(0, 2, 1)))
    dnorm = dPi @ model.x0 + model.dx0 @ Pi.T
    return SqrtInfoState(Pi, norm, dPi, dnorm)


def _esrif_template(model):
    """Step-independent parts of the eSRIF pre-array and its derivatives."""
    c = model.cache.get("esrif")
    if c is None:
        n, m, q, p = model.n, model.m, model.q, model.p
        s = m + n + q
        Rs = model.sqrt_R
        Rit = np.tril(_solve_tri(Rs, np.eye(m), trans="T"))  # R^{-T/2}
        Finv = model.F_inv
        W = Rit @ model.H @ Finv
        A = np.zeros((s, s + 1))
        A[:m, :m] = Rit
        A[:m, m:m + n] = -W
        dA = np.zeros((p,) + A.shape)
        c = {"A": A, "dA": dA, "Rit": Rit, "Finv": Finv}
        if q:
            GQt = model.G @ model.sqrt_Q.T
            A[:m, m + n:s] = W @ GQt
            A[m + n:, m + n:s] = np.eye(q)
            c["GQt"] = GQt
        if p:
            dRit = inverse_derivative(Rs.T, model.d_sqrt_R.transpose(0, 2, 1))
            dFinv = model.d_F_inv
            dW = dRit @ (model.H @ Finv) + Rit @ model.dH @ Finv + (Rit @ model.H) @ dFinv
            dA[:, :m, :m] = dRit
            dA[:, :m, m:m + n] = -dW
            c["dRit"] = dRit
            c["dFinv"] = dFinv
            if q:
                dGQt = model.dG @ model.sqrt_Q.T + model.G @ model.d_sqrt_Q.transpose(0, 2, 1)
                dA[:, :m, m + n:s] = dW @ GQt + W @ dGQt
                c["dGQt"] = dGQt
        model.cache["esrif"] = c
    return c


def esrif_step(state: SqrtInfoState, model: ModelEval, z, u=None):
    """One eSRIF step (with sensitivities if the state carries them).

    The pre-array, with ``Pi = P^{-T/2}`` and ``Rit = R^{-T/2}``, is::

        [Rit,  -Rit H F^-1,   Rit H F^-1 G Q^{T/2},  -Rit z  ]
        [0,     Pi F^-1,     -Pi F^-1 G Q^{T/2},      Pi x   ]
        [0,     0,            I,                      0      ]

    and lower triangularization with ``s = m + n + q`` leaves
    ``[R_e^{-T/2}, 0, 0, -ebar]`` and ``[-Pi_next K_p, Pi_next, 0, Pi_next x_next]``
    in the first two block rows.
    """
    _require_invertible_F(model)
    n, m, q = model.n, model.m, model.q
    s = m + n + q
    Pi, norm = state.invSqrtP, state.norm
    c = _esrif_template(model)
    Finv = c["Finv"]
    Pf = Pi @ Finv
    A = c["A"].copy()
    A[:m, -1] = -(c["Rit"] @ z)
    A[m:m + n, m:m + n] = Pf
    A[m:m + n, -1] = norm
    if q:
        A[m:m + n, m + n:s] = -(Pf @ c["GQt"])

    sens = state.d_invSqrtP is not None
    if sens:
        dPi = state.d_invSqrtP
        dPf = dPi @ Finv + Pi @ c["dFinv"]
        dA = c["dA"].copy()
        dA[:, :m, -1] = -(c["dRit"] @ z)
        dA[:, m:m + n, m:m + n] = dPf
        dA[:, m:m + n, -1] = state.d_norm
        if q:
            dA[:, m:m + n, m + n:s] = -(dPf @ c["GQt"] + Pf @ c["dGQt"])
        res = post_derivative_lower(A, dA, s)
        L = res.L
    else:
        _, L = triangularize_lower(A, s)

    Pi_next = L[m:m + n, m:m + n]
    norm_next = L[m:m + n, -1].copy()
    out = StepOutput("esrif", -L[:m, -1], L[:m, :m], None,
                     gain=L[m:m + n, :m], residual=L[m + n:, :])
    dPi_next = dnorm_next = None
    if sens:
        out.d_factor = res.dL21[:, :m, :m]
        out.d_innovation = -res.dL22[:, :m, 0]
        dPi_next = res.dL21[:, m:m + n, m:m + n]
        dnorm_next = res.dL22[:, m:m + n, 0].copy()

    if u is not None and model.d:
        Bu = model.B @ u
        dBu = model.dB @ u if sens else None
        if Bu.any() or (sens and dBu.any()):
            norm_next = norm_next + Pi_next @ Bu
            if sens:
                dnorm_next = dnorm_next + dPi_next @ Bu + dBu @ Pi_next.T

    new = SqrtInfoState(Pi_next, norm_next, dPi_next, dnorm_next)
    check_triangular_diagonal(Pi_next, SingularMatrix, "P^{-T/2}")
    out.x_next = new.xhat
    return new, out


def esrif_sensitivity_step(state, model, z, u=None):
    if state.d_invSqrtP is None:
        raise ValueError("state carries no sensitivities; use esrif_init(..., sensitivity=True)")
    return esrif_step(state, model, z, u)


# ---------------------------------------------------------------------------

ENGINES = {
    "conventional": (kf_init, kf_step),
    "esrcf": (esrcf_init, esrcf_step),
    "esrif": (esrif_init, esrif_step),
}


def get_engine(name):
    try:
        return ENGINES[name]
    except KeyError:
        raise ValueError(f"unknown engine {name!r}; choose from {sorted(ENGINES)}") from None


def iterate(model: ModelEval, z, u=None, engine="esrcf", sensitivity=False):
    """Run an engine over a measurement sequence, yielding ``(k, state, output)``.

    ``k`` is 1-based. Any numerical breakdown is re-raised as
    ``FilterFailure`` carrying the step index.
    """
    init, step = get_engine(engine)
    z = np.asarray(z, dtype=float)
    state = init(model, sensitivity=sensitivity)
    for k in range(z.shape[0]):
        uk = None if u is None else u[k]
        try:
            state, out = step(state, model, z[k], uk)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            raise FilterFailure(k + 1, exc) from exc
        if not np.all(np.isfinite(out.x_next)):
            raise FilterFailure(k + 1, FloatingPointError("non-finite state estimate"))
        yield k + 1, state, out


def run(model: ModelEval, z, u=None, engine="esrcf", sensitivity=False):
    """Filter a whole sequence; returns the list of step outputs."""
    return [out for _, _, out in iterate(model, z, u, engine, sensitivity)]


def write_trace(path, outputs):
    """Per-step CSV trace ``k, innovation..., diag(factor)..., xhat...``."""
    if not outputs:
        raise ValueError("no outputs to write")
    m = outputs[0].innovation.size
    n = outputs[0].x_next.size
    header = (["k"] + [f"innov_{i + 1}" for i in range(m)]
              + [f"factor_diag_{i + 1}" for i in range(m)] + [f"xhat_{i + 1}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, out in enumerate(outputs, 1):
            row = [k] + list(out.innovation) + list(np.diagonal(out.factor)) + list(out.x_next)
            w.writerow([repr(float(v)) if not isinstance(v, int) else v for v in row])
