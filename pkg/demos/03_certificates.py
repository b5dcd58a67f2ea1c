"""Probabilistic certificates and their empirical coverage.

The matrix Bernstein inequality gives a sample size M after which the
estimator lies within a certified radius of the Galerkin matrix with
probability p. Here the certificate is computed for a small OU problem and
then checked against 200 independent estimations.
"""

# %%
from koopmc import (
    CoverageProblem,
    OperatorConstants,
    OperatorSpec,
    builtin_ou,
    gamma_n,
    monomials,
    oc_schedule,
    projection_error_certificate,
    reference_matrices,
    verify_coverage,
)
from koopmc.bounds import BoundValidityError

ou = builtin_ou()
gen = OperatorSpec("koopman_generator")

# %% [markdown]
# The certificate only holds for delta < 1/(2 ||G^-1||). Larger
# dictionaries have smaller Gram eigenvalues, so the admissible range
# shrinks quickly with the degree.

# %%
for k in (1, 2, 4, 8):
    D = monomials(1, k, ou.lower, ou.upper)
    ref = reference_matrices(D, ou, gen, method="analytic")
    c = OperatorConstants.from_reference(ref, gamma_n(D, ou, gen))
    try:
        rep = projection_error_certificate(c, 0.1, 0.9)
        print(f"k={k}: kappa={c.kappa:9.3g}  M={rep.required_M:.3g}  radius={rep.radius:.3g}")
    except BoundValidityError:
        print(f"k={k}: kappa={c.kappa:9.3g}  delta=0.1 outside the proved range (max {c.delta_max:.3g})")

# %% [markdown]
# For k = 1 the certified M is small enough to test directly. The binomial
# threshold p - 2 sqrt(p(1-p)/trials) allows for sampling error in the
# coverage estimate itself.

# %%
D = monomials(1, 1, ou.lower, ou.upper)
ref = reference_matrices(D, ou, gen, method="analytic")
c = OperatorConstants.from_reference(ref, gamma_n(D, ou, gen))
res = verify_coverage("prop-projection", c, 0.1, 0.9, 200, 0, CoverageProblem(D, ou, gen, ref))
print(f"coverage {res.frequency:.3f} at M={res.M} (threshold {res.threshold:.3f})")

# %% [markdown]
# The accuracy-targeted schedule picks delta from a requested error epsilon.
# Halving epsilon roughly quadruples the sample size.

# %%
for eps in (0.4, 0.2, 0.1):
    print(f"epsilon={eps}: M={oc_schedule(c, eps, 0.9).required_M}")
