"""Eigenvalues of the estimated generator and their tracking.

The OU generator has eigenvalues 0, -1, -2, ... with polynomial
eigenfunctions. Exact generator data find them at once; the stochastic
Koopman operator at a fixed time needs simulated data and converges with M.
"""

# %%
import numpy as np

from koopmc import (
    OperatorSpec,
    SamplingMeasure,
    builtin_ou,
    eigensystem,
    empirical_matrices,
    monomials,
    reference_matrices,
    sample_points,
    solve_estimator,
    track_eigenvalues,
)
from koopmc._rng import stream

ou = builtin_ou()
D = monomials(1, 8, ou.lower, ou.upper)
X = sample_points(SamplingMeasure.on(ou), 2**16, seed=1)
est = solve_estimator(empirical_matrices(D, ou, OperatorSpec("koopman_generator"), X))
ref = reference_matrices(D, ou, OperatorSpec("koopman_generator"), method="analytic")
for p in eigensystem(est, ref, "D")[:5]:
    print(f"lambda={p.value.real:+.6f}  residual={p.residual:.1e}")

# %% [markdown]
# Now the Koopman operator over t = 0.2 with Euler-Maruyama steps of 0.02.
# The discrete chain maps x to 0.98 x plus noise at each step, so its leading
# nontrivial eigenvalue is 0.98^10.

# %%
op = OperatorSpec("koopman_t", t=0.2, h=0.02)
D3 = monomials(1, 3, ou.lower, ou.upper)
Ms = [2**k for k in range(8, 17, 2)]
ests = [
    solve_estimator(empirical_matrices(D3, ou, op, sample_points(SamplingMeasure.on(ou), M, 2, M), stream(2, "dyn", M)))
    for M in Ms
]
tr = track_eigenvalues(ests, 3)
print("exact:", np.round([1, 0.98**10, 0.98**20], 5))
for M, row in zip(Ms, tr.values):
    print(f"M={M:6d}", np.round(row.real, 5))
