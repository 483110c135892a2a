"""Differentiating a triangularized array without differentiating Q.

A 3 x 4 pre-array with polynomial entries is reduced to upper and to lower
triangular form at theta = 2. The derivative of the post-array is obtained
from the pre-array derivative alone, then checked two ways: against a
central finite difference and against the squaring identity
(A^T A)' = (P^T P)', which holds because Q is orthogonal.
"""

# %%
import numpy as np

from sqrtkf import post_derivative_lower, post_derivative_upper, verify_lemma_tables
from sqrtkf.bench import example_prearray
from sqrtkf.triarray import normalize_signs, triangularize_upper

np.set_printoptions(precision=4, suppress=True)

A, dA = example_prearray(2.0)
print("pre-array A(2):\n", A)

# %% upper triangular post-array R = Q A and its derivative
up = post_derivative_upper(A, dA, s=3)
print("R:\n", up.R)
print("dR11:\n", up.dR11[0])
print("dR12:\n", up.dR12[0])

# %% the derivative agrees with a finite difference once the signs are pinned
h = 1e-6


def positive(theta):
    _, R = triangularize_upper(example_prearray(theta)[0], 3)
    return normalize_signs(R, s=3)


fd = (positive(2 + h) - positive(2 - h)) / (2 * h)
_, dR = normalize_signs(up.R, [up.full_derivative()[0]], s=3)
print("max |analytic - finite difference| =", np.max(np.abs(dR - fd)))

# %% lower triangular version
lo = post_derivative_lower(A, dA, s=3)
print("L:\n", lo.L)
print("dL21:\n", lo.dL21[0])
print("dL22:\n", lo.dL22[0])

# %% reference tables, after row-sign matching
report = verify_lemma_tables()
for name, r in report.items():
    print(f"{name}: max deviation {r['max_deviation']:.1e}, self-check {r['self_check']:.1e}")
