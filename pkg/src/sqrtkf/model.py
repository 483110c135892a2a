"""Parameterized linear-Gaussian state-space models.

A model family maps a parameter vector ``theta`` to the system matrices

    x_{k+1} = F x_k + B u_k + G w_k,   w_k ~ N(0, Q)
    z_k     = H x_k + v_k,             v_k ~ N(0, R)

with the prior ``x_1 ~ N(x0, P0)`` on the state at the first measurement,
together with the derivatives of every matrix with respect to each
component of ``theta``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, DomainError, NotPositiveDefinite
from .triarray import cholesky_derivative, cholesky_upper, inverse_derivative, triangularize_upper

MATRIX_NAMES = ("F", "B", "G", "H", "Q", "R", "x0", "P0")
SYMMETRIC = ("Q", "R", "P0")

_EPS = np.finfo(float).eps


def _shapes(n, m, d, q):
    return {"F": (n, n), "B": (n, d), "G": (n, q), "H": (m, n),
            "Q": (q, q), "R": (m, m), "x0": (n,), "P0": (n, n)}


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


@dataclass(frozen=True)
class ModelEval:
    """System matrices and their derivatives at one parameter value.

    Each derivative attribute ``dF``, ``dB``, ... is a stack with the
    parameter index first, e.g. ``dF.shape == (p, n, n)``. Square-root
    factors needed by the array filters are computed lazily and cached;
    ``cache`` holds further per-parameter constants built by the engines.
    """

    theta: np.ndarray
    F: np.ndarray
    B: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    P0: np.ndarray
    dF: np.ndarray
    dB: np.ndarray
    dG: np.ndarray
    dH: np.ndarray
    dQ: np.ndarray
    dR: np.ndarray
    dx0: np.ndarray
    dP0: np.ndarray
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return self.F.shape[0]

    @property
    def m(self):
        return self.H.shape[0]

    @property
    def d(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.G.shape[1]

    @property
    def p(self):
        return self.dF.shape[0]

    @cached_property
    def sqrt_R(self):
        return cholesky_upper(self.R)

    @cached_property
    def d_sqrt_R(self):
        return cholesky_derivative(self.sqrt_R, self.dR)

    @cached_property
    def sqrt_Q(self):
        # Q may be singular (e.g. zero); fall back to a triangularized
        # eigen-factor, which still satisfies U^T U = Q
        try:
            return cholesky_upper(self.Q)
        except NotPositiveDefinite:
            w, V = np.linalg.eigh(self.Q)
            return triangularize_upper((V * np.sqrt(np.clip(w, 0.0, None))).T, self.q)[1]

    @cached_property
    def d_sqrt_Q(self):
        if not self.dQ.any():
            return np.zeros_like(self.dQ)
        return cholesky_derivative(self.sqrt_Q, self.dQ)

    @cached_property
    def sqrt_P0(self):
        return cholesky_upper(self.P0)

    @cached_property
    def d_sqrt_P0(self):
        return cholesky_derivative(self.sqrt_P0, self.dP0)

    @cached_property
    def F_inv(self):
        return np.linalg.inv(self.F)

    @cached_property
    def d_F_inv(self):
        return inverse_derivative(self.F, self.dF)

    @cached_property
    def F_invertible(self):
        s = np.linalg.svd(self.F, compute_uv=False)
        return bool(s.size == 0 or s[-1] > self.n * _EPS * s[0])


@dataclass
class ModelSpec:
    """A parameterized model family.

    Parameters
    ----------
    n, m, d, q, p : int
        State, measurement, input, process-noise and parameter dimensions.
    matrices : callable
        ``theta -> dict`` with the eight entries of ``MATRIX_NAMES``.
    derivatives : callable, optional
        ``theta -> dict`` of derivative stacks (parameter index first).
        When missing, central finite differences are used.
    name : str
    params : dict
        Family parameters, recorded in output metadata.
    bounds : (p, 2) array, optional
        Box on ``theta`` used by the estimator.
    """

    n: int
    m: int
    d: int
    q: int
    p: int
    matrices: Callable
    derivatives: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    bounds: Optional[np.ndarray] = None

    def with_finite_differences(self):
        """Copy of this spec that ignores the analytic derivatives."""
        return ModelSpec(self.n, self.m, self.d, self.q, self.p, self.matrices, None,
                         self.name, dict(self.params), self.bounds)


def fd_step(theta_i):
    return _EPS ** (1.0 / 3.0) * max(1.0, abs(theta_i))


def _fd_derivatives(spec, theta):
    out = {k: [] for k in MATRIX_NAMES}
    for i in range(spec.p):
        h = fd_step(theta[i])
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        hi, lo = spec.matrices(tp), spec.matrices(tm)
        for k in MATRIX_NAMES:
            out[k].append((np.asarray(hi[k], float) - np.asarray(lo[k], float)) / (tp[i] - tm[i]))
    return out


def evaluate(spec: ModelSpec, theta) -> ModelEval:
    """Evaluate all system matrices and their derivatives at ``theta``.

    ``Q``, ``R``, ``P0`` and their derivatives are symmetrized.

    Raises
    ------
    DomainError
        If ``R`` or ``P0`` is not positive definite or ``Q`` has a clearly
        negative eigenvalue.
    DimensionMismatch
        If a returned matrix does not have the declared shape.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    if theta.shape != (spec.p,):
        raise DimensionMismatch(f"theta must have {spec.p} components, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise DomainError("theta is not finite")
    shapes = _shapes(spec.n, spec.m, spec.d, spec.q)
    vals = {k: np.asarray(v, dtype=float) for k, v in spec.matrices(theta).items()}
    if spec.derivatives is not None:
        ders = spec.derivatives(theta)
    else:
        ders = _fd_derivatives(spec, theta)
    for k in MATRIX_NAMES:
        if k not in vals:
            raise DimensionMismatch(f"model family did not return {k}")
        if vals[k].shape != shapes[k]:
            raise DimensionMismatch(f"{k} has shape {vals[k].shape}, expected {shapes[k]}")
    try:
        ders = {k: np.asarray(ders[k], dtype=float).reshape((spec.p,) + shapes[k]) for k in MATRIX_NAMES}
    except (KeyError, ValueError) as exc:
        raise DimensionMismatch(f"derivative stack does not match the declared shapes: {exc}") from None
    for k in SYMMETRIC:
        vals[k] = _sym(vals[k])
        ders[k] = _sym(ders[k])

    for k in ("R", "P0"):
        try:
            cholesky_upper(vals[k])
        except NotPositiveDefinite:
            raise DomainError(f"{k} is not positive definite at theta={theta.tolist()}") from None
    if spec.q:
        w = np.linalg.eigvalsh(vals["Q"])
        if w[0] < -1e-12 * max(1.0, abs(w[-1])):
            raise DomainError(f"Q is not positive semidefinite at theta={theta.tolist()}")

    return ModelEval(theta=theta, **vals, **{"d" + k: ders[k] for k in MATRIX_NAMES})


# ---------------------------------------------------------------------------
# model families


def example3_spec(delta, bounds=(1e-3, 1e3)):
    """Ill-conditioned benchmark: three identical states seen by two sensors.

    ``F = I``, no input or process noise, ``R = delta^2 theta^2 I`` and
    ``H = [[1, 1, 1], [1, 1, 1 + delta]]``, prior ``N(0, theta^2 I)``.
    As ``delta`` approaches the unit roundoff the first innovation
    covariance becomes numerically singular.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    delta = float(delta)
    H = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0 + delta]])

    def matrices(theta):
        t = theta[0]
        return {"F": np.eye(3), "B": np.zeros((3, 1)), "G": np.zeros((3, 1)), "H": H,
                "Q": np.ones((1, 1)), "R": delta**2 * t**2 * np.eye(2),
                "x0": np.zeros(3), "P0": t**2 * np.eye(3)}

    def derivatives(theta):
        t = theta[0]
        return {"F": np.zeros((1, 3, 3)), "B": np.zeros((1, 3, 1)), "G": np.zeros((1, 3, 1)),
                "H": np.zeros((1, 2, 3)), "Q": np.zeros((1, 1, 1)),
                "R": (2 * delta**2 * t * np.eye(2))[None], "x0": np.zeros((1, 3)),
                "P0": (2 * t * np.eye(3))[None]}

    return ModelSpec(3, 2, 1, 1, 1, matrices, derivatives, name="example3",
                     params={"delta": delta}, bounds=np.array([bounds], dtype=float))


def polynomial_spec(terms, n, m, d, q, p, name="polynomial", bounds=None):
    """Family whose matrices are polynomials in ``theta``.

    ``terms[name]`` is a list of ``(coef, powers)`` pairs meaning
    ``coef * prod(theta ** powers)``; missing matrices are zero. Analytic
    derivatives are provided.
    """
    shapes = _shapes(n, m, d, q)
    parsed = {}
    for k in MATRIX_NAMES:
        parsed[k] = []
        for coef, powers in terms.get(k, []):
            coef = np.asarray(coef, dtype=float).reshape(shapes[k])
            powers = np.asarray(powers, dtype=int).reshape(p)
            if np.any(powers < 0):
                raise ValueError("powers must be nonnegative")
            parsed[k].append((coef, powers))

    def matrices(theta):
        out = {}
        for k in MATRIX_NAMES:
            M = np.zeros(shapes[k])
            for coef, powers in parsed[k]:
                M = M + coef * np.prod(theta ** powers)
            out[k] = M
        return out

    def derivatives(theta):
        out = {}
        for k in MATRIX_NAMES:
            D = np.zeros((p,) + shapes[k])
            for coef, powers in parsed[k]:
                for i in range(p):
                    if powers[i] == 0:
                        continue
                    lowered = powers.copy()
                    lowered[i] -= 1
                    D[i] = D[i] + coef * powers[i] * np.prod(theta ** lowered)
            out[k] = D
        return out

    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float).reshape(p, 2)
    return ModelSpec(n, m, d, q, p, matrices, derivatives, name=name,
                     params={"terms": {k: [(np.asarray(c).tolist(), np.asarray(e).tolist())
                                           for c, e in terms.get(k, [])] for k in terms}},
                     bounds=bounds)


def random_spec(rng, n=2, m=1, p=1, d=1, q=None, scale=0.1, name="random"):
    """Well-conditioned random polynomial family around ``theta = 0``.

    Every matrix has a constant term plus random linear and quadratic terms
    of size ``scale`` in each parameter. Constant terms are chosen so that
    ``F`` is a contraction with singular values in ``[0.5, 0.95]`` and
    ``Q``, ``R``, ``P0`` have eigenvalues in ``[0.5, 2]``, which keeps them
    positive definite for ``|theta| <= 1``.
    """
    rng = np.random.default_rng(rng)
    q = n if q is None else q
    shapes = _shapes(n, m, d, q)

    def spd(k):
        U, _ = np.linalg.qr(rng.standard_normal((k, k)))
        return U @ np.diag(rng.uniform(0.5, 2.0, k)) @ U.T

    def perturb(shape, symmetric):
        M = rng.standard_normal(shape) * scale
        if symmetric:
            M = _sym(M) / max(1, shape[0])
        return M

    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    const = {"F": U @ np.diag(rng.uniform(0.5, 0.95, n)) @ V.T,
             "B": rng.standard_normal(shapes["B"]),
             "G": rng.standard_normal(shapes["G"]),
             "H": rng.standard_normal(shapes["H"]),
             "Q": spd(q), "R": spd(m), "x0": rng.standard_normal(n), "P0": spd(n)}
    terms = {}
    for k in MATRIX_NAMES:
        sym = k in SYMMETRIC
        # Q, R, P0 perturbations are scaled so the constant term dominates
        s = 0.5 if sym else 1.0
        lst = [(const[k], [0] * p)]
        for i in range(p):
            e = [0] * p
            e[i] = 1
            lst.append((s * perturb(shapes[k], sym), e))
            e2 = [0] * p
            e2[i] = 2
            lst.append((s * perturb(shapes[k], sym), e2))
        terms[k] = lst
    return polynomial_spec(terms, n, m, d, q, p, name=name,
                           bounds=np.tile([-1.0, 1.0], (p, 1)))


def constant_spec(model: ModelEval, p=1):
    """Spec whose matrices do not depend on ``theta`` (all derivatives zero)."""
    vals = {k: getattr(model, k) for k in MATRIX_NAMES}
    terms = {k: [(v, [0] * p)] for k, v in vals.items()}
    return polynomial_spec(terms, model.n, model.m, model.d, model.q, p, name="constant")


# ---------------------------------------------------------------------------
# simulation


@dataclass
class MeasurementLog:
    """Measurements ``z`` (N, m), inputs ``u`` (N, d) and metadata.

    ``x`` holds the simulated true states when available. Row ``k - 1``
    holds ``z_k`` and the input ``u_k`` that drives the transition to
    ``x_{k+1}``.
    """

    z: np.ndarray
    u: np.ndarray
    x: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.z.shape[0]


GENERATOR = "numpy.random.Generator(PCG64)"


def _psd_factor(S):
    """Upper factor ``U`` with ``U.T @ U == S`` for positive semidefinite ``S``."""
    if S.size == 0:
        return S
    try:
        return np.linalg.cholesky(S).T
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return (V * np.sqrt(np.clip(w, 0.0, None))).T


def simulate(spec: ModelSpec, theta, N, seed, inputs=None, allow_singular=False) -> MeasurementLog:
    """Draw one trajectory of ``N`` measurements.

    Gaussian draws are Cholesky transforms of standard normals from
    ``numpy.random.default_rng(seed)``. ``inputs`` defaults to zero.
    ``allow_singular`` skips the positive-definiteness checks of
    ``evaluate`` so that noise-free models can be simulated.
    """
    if int(N) < 1:
        raise ValueError("N must be at least 1")
    N = int(N)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if allow_singular:
        model = {k: np.asarray(v, dtype=float) for k, v in spec.matrices(theta).items()}
    else:
        ev = evaluate(spec, theta)
        model = {k: getattr(ev, k) for k in MATRIX_NAMES}
    F, B, G, H = model["F"], model["B"], model["G"], model["H"]
    n, m, d, q = spec.n, spec.m, spec.d, spec.q
    if inputs is None:
        u = np.zeros((N, d))
    else:
        u = np.asarray(inputs, dtype=float).reshape(N, d)

    rng = np.random.default_rng(seed)
    sP0 = _psd_factor(_sym(model["P0"]))
    sQ = _psd_factor(_sym(model["Q"]))
    sR = _psd_factor(_sym(model["R"]))
    x = model["x0"] + rng.standard_normal(n) @ sP0
    xs = np.empty((N, n))
    z = np.empty((N, m))
    for k in range(N):
        xs[k] = x
        z[k] = H @ x + rng.standard_normal(m) @ sR
        w = rng.standard_normal(q) @ sQ
        x = F @ x + B @ u[k] + G @ w
    meta = {"seed": int(seed), "theta": theta.tolist(), "family": spec.name,
            "params": spec.params, "generator": GENERATOR, "N": N}
    return MeasurementLog(z=z, u=u, x=xs, metadata=meta)
