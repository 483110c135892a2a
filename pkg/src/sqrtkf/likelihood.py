"""Negative log-likelihood of the innovations and its gradient.

The performance index is

    mu(theta) = N m / 2 ln(2 pi) + 1/2 sum_k [ln det R_e,k + e_k^T R_e,k^{-1} e_k]

accumulated strictly in step order. The square-root engines evaluate the
same quantity from their factors: ``ln det R_e = 2 sum ln|diag(R_e^{1/2})|``
and the quadratic form is the squared norm of the normalized innovation.
Absolute values make both terms independent of the row signs the
orthogonal transformations leave on the factors.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InnovationCovSingular, SingularTriangular

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class NegLogLikelihood:
    """Running value and gradient of ``mu``.

    ``terms`` collects per-step ``(increment, gradient increment)`` pairs
    when ``keep_terms`` is set.
    """

    p: int
    value: float = 0.0
    gradient: np.ndarray = None
    count: int = 0
    keep_terms: bool = False
    terms: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        if self.gradient is None:
            self.gradient = np.zeros(self.p)
        if self.keep_terms and self.terms is None:
            self.terms = []

    def _add(self, value, grad):
        self.value += value
        if grad is not None:
            self.gradient = self.gradient + grad
        self.count += 1
        if self.keep_terms:
            self.terms.append((value, None if grad is None else np.array(grad)))

    def write_trace(self, path):
        """CSV ``k, mu_increment, grad_increment_1..p``."""
        if not self.keep_terms:
            raise ValueError("accumulator was created without keep_terms")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mu_increment"] + [f"grad_increment_{i + 1}" for i in range(self.p)])
            for k, (v, g) in enumerate(self.terms, 1):
                g = np.full(self.p, np.nan) if g is None else g
                w.writerow([k, repr(float(v))] + [repr(float(x)) for x in g])


def accumulate_conventional(out, acc: NegLogLikelihood):
    """Add one conventional-filter step to ``acc``.

    Gradient increment per parameter:
    ``1/2 tr(Re^{-1} dRe) - 1/2 a^T dRe a + a^T de`` with ``a = Re^{-1} e``.
    """
    Re, e = out.factor, out.innovation
    m = e.size
    sign, logdet = np.linalg.slogdet(Re)
    if not (sign > 0 and np.isfinite(logdet)):
        raise InnovationCovSingular("innovation covariance is not positive definite")
    try:
        a = np.linalg.solve(Re, e)
    except np.linalg.LinAlgError as exc:
        raise InnovationCovSingular(str(exc)) from None
    value = 0.5 * (m * LOG_2PI + logdet + e @ a)
    grad = None
    if out.d_factor is not None:
        dRe, de = out.d_factor, out.d_innovation
        Reinv_dRe = np.linalg.solve(Re, dRe)
        grad = (0.5 * np.trace(Reinv_dRe, axis1=1, axis2=2)
                - 0.5 * np.einsum("i,pij,j->p", a, dRe, a) + de @ a)
    acc._add(value, grad)
    return acc


def accumulate_sqrt(out, acc: NegLogLikelihood):
    """Add one square-root-engine step to ``acc``.

    For the covariance engine ``U = R_e^{1/2}`` the gradient increment is
    ``tr(U^{-1} dU) + ebar^T debar``. The information engine provides
    ``V = U^{-T}`` instead, and ``tr(U^{-1} dU) = -tr(V^{-1} dV)`` follows
    from differentiating ``V^T U = I``. Both factors and their derivatives
    are triangular with the same orientation, so the traces reduce to sums
    of diagonal ratios.
    """
    T, ebar = out.factor, out.innovation
    m = ebar.size
    d = np.diagonal(T)
    if not np.all(np.isfinite(d)) or np.min(np.abs(d)) < np.finfo(float).tiny:
        raise SingularTriangular("innovation factor has a zero diagonal entry")
    if out.kind == "esrcf":
        sign = 1.0
    elif out.kind == "esrif":
        sign = -1.0
    else:
        raise ValueError(f"accumulate_sqrt cannot handle {out.kind!r} outputs")
    half_logdet = sign * np.sum(np.log(np.abs(d)))
    value = 0.5 * m * LOG_2PI + half_logdet + 0.5 * (ebar @ ebar)
    grad = None
    if out.d_factor is not None:
        dd = np.diagonal(out.d_factor, axis1=1, axis2=2)
        grad = sign * np.sum(dd / d, axis=1) + out.d_innovation @ ebar
    acc._add(value, grad)
    return acc


def accumulate(out, acc):
    if out.kind == "conventional":
        return accumulate_conventional(out, acc)
    return accumulate_sqrt(out, acc)
