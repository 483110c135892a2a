"""One model, three filters.

The conventional Kalman filter, the extended square-root covariance filter
and the extended square-root information filter are run on the same data.
In exact arithmetic they are the same estimator; in floating point they
agree to roundoff on a benign model.
"""

# %%
import numpy as np

from sqrtkf import evaluate, random_spec, run, simulate
from sqrtkf.likelihood import NegLogLikelihood, accumulate

rng = np.random.default_rng(1)
spec = random_spec(rng, n=3, m=2, p=2, d=1)
theta = np.array([0.3, -0.2])
u = rng.standard_normal((200, 1))
data = simulate(spec, theta, 200, seed=7, inputs=u)
model = evaluate(spec, theta)

# %%
states, mu = {}, {}
for engine in ("conventional", "esrcf", "esrif"):
    outs = run(model, data.z, data.u, engine)
    states[engine] = np.array([o.x_next for o in outs])
    acc = NegLogLikelihood(spec.p)
    for o in outs:
        accumulate(o, acc)
    mu[engine] = acc.value
    print(f"{engine:>12}: mu = {acc.value:.12f}")

# %%
for engine in ("esrcf", "esrif"):
    diff = np.max(np.abs(states[engine] - states["conventional"]))
    print(f"max state difference {engine} vs conventional: {diff:.2e}")
