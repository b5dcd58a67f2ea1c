"""Exact recovery on an invariant subspace.

The Ornstein-Uhlenbeck generator maps polynomials of degree k to polynomials
of degree k, so the monomials span an invariant subspace. Once the empirical
Gram matrix has full rank, the data-driven matrix equals the Galerkin matrix
up to roundoff, whatever the number of samples.
"""

# %%
import numpy as np

from koopmc import (
    OperatorSpec,
    SamplingMeasure,
    builtin_ou,
    empirical_matrices,
    galerkin_matrix,
    matrix_error,
    monomials,
    reference_matrices,
    sample_points,
    solve_estimator,
)

ou = builtin_ou()
basis = monomials(1, 8, ou.lower, ou.upper)
gen = OperatorSpec("koopman_generator")

# %% [markdown]
# The reference matrix comes from exact polynomial quadrature. In the
# column convention each column holds the coefficients of L x^n, which is
# -n x^n + n(n-1)/4 x^(n-2).

# %%
A_N = galerkin_matrix(reference_matrices(basis, ou, gen, method="analytic"))
np.set_printoptions(precision=3, suppress=True, linewidth=110)
print(A_N)

# %% [markdown]
# Fewer samples than basis functions leave the Gram matrix singular; the
# pseudoinverse still returns a matrix, but only the part seen by the data
# is right. From N samples on, the error collapses to roundoff.

# %%
for M in (4, 8, 9, 16, 256, 4096):
    X = sample_points(SamplingMeasure.on(ou), M, seed=0)
    est = solve_estimator(empirical_matrices(basis, ou, gen, X))
    print(f"M={M:5d}  rank={est.rank}  normalised error={matrix_error(est.A, A_N)[1]:.2e}")
