"""Gradient-based maximum-likelihood estimation of model parameters.

Every candidate ``theta`` costs one sensitivity-augmented filter pass over
the data (``evaluate_pi``), which returns the negative log-likelihood and
its exact gradient together with the state estimates. ``estimate`` iterates

    theta_n = theta_{n-1} - gamma_n * H_n grad mu(theta_{n-1})

with ``H_n = I`` (steepest descent) or a memoryless BFGS matrix, a
backtracking choice of ``gamma_n`` and projection onto box bounds.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, FilterFailure, SingularMatrix, SqrtKFError
from .filters import ENGINES, iterate
from .likelihood import NegLogLikelihood, accumulate
from .model import ModelSpec, evaluate

logger = logging.getLogger(__name__)

TERMINATIONS = ("gradTol", "thetaTol", "maxIters", "filterFailure")


def check_engine(spec: ModelSpec, theta, engine):
    """Refuse an engine that cannot run on ``spec`` at ``theta``.

    Raises
    ------
    ValueError
        Unknown engine name.
    DomainError
        The model is not admissible at ``theta``.
    SingularMatrix
        ``engine == "esrif"`` and ``F(theta)`` is singular.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {sorted(ENGINES)}")
    model = evaluate(spec, theta)
    if engine == "esrif" and not model.F_invertible:
        raise SingularMatrix("eSRIF requires invertible F")
    return model


def evaluate_pi(spec: ModelSpec, data, theta, engine="esrcf", keep_terms=False, return_states=False):
    """Negative log-likelihood and gradient at ``theta`` from one filter pass.

    Raises
    ------
    FilterFailure
        If the engine breaks down (step index recorded) or the model is not
        admissible at ``theta`` (step 0).
    """
    try:
        model = evaluate(spec, theta)
    except (DomainError, np.linalg.LinAlgError) as exc:
        raise FilterFailure(0, exc) from exc
    if data.z.shape[1] != spec.m:
        raise ValueError(f"data has {data.z.shape[1]} measurement columns, model expects {spec.m}")
    acc = NegLogLikelihood(spec.p, keep_terms=keep_terms)
    states = []
    u = data.u if spec.d and data.u is not None and data.u.size else None
    for k, state, out in iterate(model, data.z, u, engine, sensitivity=True):
        try:
            accumulate(out, acc)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FilterFailure(k, exc) from exc
        if return_states:
            states.append(out.x_next)
    if not (np.isfinite(acc.value) and np.all(np.isfinite(acc.gradient))):
        raise FilterFailure(data.N, FloatingPointError("non-finite likelihood"))
    if return_states:
        return acc, np.array(states)
    return acc


@dataclass
class OptimizerConfig:
    """Settings of ``estimate``.

    ``method`` is ``"gradient"`` (plain steepest descent) or ``"bfgs"``
    (memoryless BFGS direction). A trial point is accepted when
    ``mu_new <= mu_old + c1 * grad.(theta_new - theta_old) + slack``.
    ``max_step`` caps the length of the first trial step of each line
    search; ``None`` leaves it uncapped. ``grad_tol`` defaults to
    ``1e-6 * max(1, |mu|)``.
    """

    engine: str = "esrcf"
    theta0: Optional[list] = None
    method: str = "gradient"
    gamma0: float = 1.0
    shrink: float = 0.5
    slack: float = 0.0
    c1: float = 0.0
    max_step: Optional[float] = None
    max_iters: int = 200
    grad_tol: Optional[float] = None
    theta_tol: float = 1e-8
    bounds: Optional[list] = None

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.slack < 0 or self.c1 < 0:
            raise ValueError("slack and c1 must be nonnegative")
        if self.theta_tol <= 0 or (self.grad_tol is not None and self.grad_tol <= 0):
            raise ValueError("tolerances must be positive")
        if self.method not in ("gradient", "bfgs"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class EstimationResult:
    theta: np.ndarray
    termination: str
    trace: list = field(default_factory=list)  # (theta, mu, gradnorm, gamma)
    states: Optional[np.ndarray] = None
    failure: Optional[dict] = None
    evaluations: int = 0

    @property
    def mu(self):
        return self.trace[-1][1] if self.trace else float("nan")

    def to_dict(self):
        return {
            "theta_hat": np.asarray(self.theta).tolist(),
            "termination": self.termination,
            "failure": self.failure,
            "evaluations": self.evaluations,
            "trace": [{"n": i, "theta": np.asarray(t).tolist(), "mu": mu, "gradnorm": g, "gamma": gm}
                      for i, (t, mu, g, gm) in enumerate(self.trace)],
        }

    def to_json(self, path, metadata=None):
        doc = {"metadata": metadata or {}, **self.to_dict()}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    def write_trace(self, path):
        """CSV ``n, theta_1..p, mu, gradnorm, gamma``."""
        p = len(self.theta)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + [f"theta_{i + 1}" for i in range(p)] + ["mu", "gradnorm", "gamma"])
            for i, (t, mu, g, gm) in enumerate(self.trace):
                w.writerow([i] + [repr(float(v)) for v in t] + [repr(float(mu)), repr(float(g)),
                                                                  repr(float(gm))])


def _bounds(spec, config):
    b = config.bounds if config.bounds is not None else spec.bounds
    if b is None:
        return None
    return np.asarray(b, dtype=float).reshape(spec.p, 2)


def _direction(g, s, y, method):
    if method == "gradient" or s is None:
        return -g
    sy = s @ y
    if not sy > 0:
        return -g
    # memoryless BFGS: one update of the scaled identity (sy / yy) I
    rho = 1.0 / sy
    tau = sy / (y @ y)
    Hg = tau * g
    Hg = Hg - rho * tau * (y @ g) * s - rho * tau * (s @ g) * y
    Hg = Hg + (rho ** 2 * tau * (y @ y) * (s @ g) + rho * (s @ g)) * s
    return -Hg


def estimate(spec: ModelSpec, data, config: OptimizerConfig = None, keep_states=True) -> EstimationResult:
    """Iterate to the maximum-likelihood estimate of ``theta``.

    Never raises on numerical breakdown: a failure at the initial point
    ends the run with termination ``"filterFailure"``; a failure at a trial
    point of the line search counts as a rejected step.
    """
    config = config or OptimizerConfig()
    bounds = _bounds(spec, config)
    theta = np.zeros(spec.p) if config.theta0 is None else np.asarray(config.theta0, dtype=float).reshape(spec.p)
    if bounds is not None:
        theta = np.clip(theta, bounds[:, 0], bounds[:, 1])
    evals = 0

    def pi(th):
        nonlocal evals
        evals += 1
        return evaluate_pi(spec, data, th, config.engine)

    try:
        acc = pi(theta)
    except FilterFailure as exc:
        return EstimationResult(theta, "filterFailure",
                                failure={"step": exc.step, "cause": f"{type(exc.cause).__name__}: {exc.cause}",
                                         "theta": theta.tolist()},
                                evaluations=evals)
    mu, g = acc.value, acc.gradient
    trace = [(theta.copy(), mu, float(np.linalg.norm(g)), 0.0)]
    s = y = None
    termination = "maxIters"
    for it in range(config.max_iters):
        gtol = config.grad_tol if config.grad_tol is not None else 1e-6 * max(1.0, abs(mu))
        if np.linalg.norm(g) <= gtol:
            termination = "gradTol"
            break
        d = _direction(g, s, y, config.method)
        gamma = config.gamma0
        if config.max_step is not None:
            gamma = min(gamma, config.max_step / np.linalg.norm(d))
        accepted = None
        while True:
            trial = theta + gamma * d
            if bounds is not None:
                trial = np.clip(trial, bounds[:, 0], bounds[:, 1])
            step = trial - theta
            if np.linalg.norm(step) <= config.theta_tol:
                break
            try:
                acc_t = pi(trial)
                if acc_t.value <= mu + config.c1 * (g @ step) + config.slack:
                    accepted = (trial, acc_t)
                    break
            except FilterFailure as exc:
                logger.debug("trial theta=%s rejected: %s", trial, exc)
            gamma *= config.shrink
        if accepted is None:
            termination = "thetaTol"
            break
        trial, acc_t = accepted
        s, y = trial - theta, acc_t.gradient - g
        theta, mu, g = trial, acc_t.value, acc_t.gradient
        trace.append((theta.copy(), mu, float(np.linalg.norm(g)), gamma))
        if np.linalg.norm(s) <= config.theta_tol:
            termination = "thetaTol"
            break
    states = None
    if keep_states:
        try:
            _, states = evaluate_pi(spec, data, theta, config.engine, return_states=True)
        except SqrtKFError:
            states = None
    return EstimationResult(theta, termination, trace, states, evaluations=evals)
