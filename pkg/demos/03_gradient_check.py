"""Exact likelihood gradients from the sensitivity filters.

Each engine has a sensitivity-augmented variant that propagates the
derivatives of its quantities alongside the filter. The resulting gradient
of the negative log-likelihood is compared with central differences.
"""

# %%
import numpy as np

from sqrtkf import evaluate_pi, random_spec, simulate
from sqrtkf.model import fd_step

rng = np.random.default_rng(3)
spec = random_spec(rng, n=4, m=2, p=3, d=1)
theta = rng.uniform(-0.4, 0.4, 3)
data = simulate(spec, theta, 100, seed=11, inputs=rng.standard_normal((100, 1)))


def central(engine):
    g = np.empty(spec.p)
    for i in range(spec.p):
        h = fd_step(theta[i])
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (evaluate_pi(spec, data, tp, engine).value - evaluate_pi(spec, data, tm, engine).value) / (2 * h)
    return g


# %%
for engine in ("conventional", "esrcf", "esrif"):
    g = evaluate_pi(spec, data, theta, engine).gradient
    fd = central(engine)
    print(f"{engine:>12}: analytic {np.round(g, 6)}  rel. error {np.max(np.abs(g - fd)) / np.max(np.abs(fd)):.1e}")
