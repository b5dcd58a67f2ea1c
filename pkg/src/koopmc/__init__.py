"""Monte Carlo Galerkin estimation of Koopman and Perron-Frobenius operators."""

from . import bounds, dictionary, estimator, noise, spectral, systems
from .bounds import (
    BoundValidityError,
    CoverageProblem,
    OperatorConstants,
    oc_radius_at,
    oc_schedule,
    projection_error_certificate,
    required_M_gram,
    required_M_structure,
    verify_coverage,
)
from .dictionary import (
    MeshSpec,
    OperatorSpec,
    apply_operator_row,
    fem_linear,
    gamma_n,
    gaussians,
    grid_centers,
    monomials,
    quadrant_centers,
)
from .estimator import (
    empirical_matrices,
    galerkin_matrix,
    matrix_error,
    operator_norm,
    operator_norm_bound,
    projection_error,
    reference_matrices,
    solve_estimator,
)
from .noise import NoiseModel, gaussian_admissibility, noisy_projection_certificate, perturbed_matrices
from .spectral import eigenfunction_error, eigensystem, track_eigenvalues
from .systems import (
    ObservableProbe,
    SamplingMeasure,
    builtin_double_well,
    builtin_ode,
    builtin_ou,
    evolve,
    get_system,
    sample_points,
)

__version__ = "0.1.0"

__all__ = [
    "bounds",
    "dictionary",
    "estimator",
    "noise",
    "spectral",
    "systems",
    "BoundValidityError",
    "CoverageProblem",
    "OperatorConstants",
    "oc_radius_at",
    "oc_schedule",
    "projection_error_certificate",
    "required_M_gram",
    "required_M_structure",
    "verify_coverage",
    "MeshSpec",
    "OperatorSpec",
    "apply_operator_row",
    "fem_linear",
    "gamma_n",
    "gaussians",
    "grid_centers",
    "monomials",
    "quadrant_centers",
    "empirical_matrices",
    "galerkin_matrix",
    "matrix_error",
    "operator_norm",
    "operator_norm_bound",
    "projection_error",
    "reference_matrices",
    "solve_estimator",
    "NoiseModel",
    "gaussian_admissibility",
    "noisy_projection_certificate",
    "perturbed_matrices",
    "eigenfunction_error",
    "eigensystem",
    "track_eigenvalues",
    "ObservableProbe",
    "SamplingMeasure",
    "builtin_double_well",
    "builtin_ode",
    "builtin_ou",
    "evolve",
    "get_system",
    "sample_points",
]
