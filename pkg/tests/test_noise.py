import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from koopmc.bounds import BoundValidityError, OperatorConstants, projection_error_certificate
from koopmc.dictionary import MeshSpec, OperatorSpec, fem_linear, gamma_n, monomials
from koopmc.estimator import empirical_matrices, reference_matrices
from koopmc.noise import NoiseModel, gaussian_admissibility, noisy_projection_certificate, perturbed_matrices
from koopmc.systems import SamplingMeasure, builtin_ode, builtin_ou, sample_points
from koopmc._rng import stream

GEN = OperatorSpec("koopman_generator")


def _ou(k=4, M=2**12, seed=0):
    ou = builtin_ou()
    D = monomials(1, k, ou.lower, ou.upper)
    return D, ou, sample_points(SamplingMeasure.on(ou), M, seed)


def test_noiseless_is_bitwise_identical():
    D, ou, X = _ou()
    a = empirical_matrices(D, ou, GEN, X)
    for model in (NoiseModel(), NoiseModel("gaussian", 0.0)):
        b = perturbed_matrices(D, ou, GEN, X, model, stream(1, "n"))
        np.testing.assert_array_equal(a.G, b.G)
        np.testing.assert_array_equal(a.C, b.C)


def test_small_noise_perturbation_size():
    D, ou, X = _ou(8, 2**16)
    g = gamma_n(D, ou, GEN)
    base = empirical_matrices(D, ou, GEN, X)
    for s in range(20):
        gt = perturbed_matrices(D, ou, GEN, X, NoiseModel("gaussian", 1e-3), stream(s, "noise"))
        assert np.linalg.norm(gt.G - base.G, 2) <= 10 * 1e-3 * math.sqrt(g)


def test_diagonal_bias():
    D, ou, X = _ou(3, 2**17)
    sigma = 0.3
    base = empirical_matrices(D, ou, GEN, X)
    gt = perturbed_matrices(D, ou, GEN, X, NoiseModel("gaussian", sigma), stream(4, "noise"))
    bias = gt.G - base.G
    # E[psi+eta][psi+eta]^T = G + sigma^2 I; off-diagonal noise averages out
    np.testing.assert_allclose(np.diag(bias), sigma**2, rtol=0.05, atol=0.02)
    assert np.abs(bias - np.diag(np.diag(bias))).max() < 0.05


def test_fem_sparse_noise_keeps_zeros():
    ode = builtin_ode()
    D = fem_linear(MeshSpec.for_interior(ode.lower, ode.upper, (5, 3)))
    X = sample_points(SamplingMeasure.on(ode), 64, 3)
    gp = perturbed_matrices(D, ode, GEN, X[:1], NoiseModel("gaussian", 0.5), stream(0, "z"))
    psi = D.evaluate(X[:1])[0]
    off = psi == 0
    np.testing.assert_array_equal(gp.G[np.ix_(off, off)], 0.0)
    dense = perturbed_matrices(D, ode, GEN, X[:1], NoiseModel("gaussian", 0.5, fem_sparse=False), stream(0, "z"))
    assert np.count_nonzero(dense.G) > np.count_nonzero(gp.G)


@given(st.integers(0, 2**32 - 1))
def test_noisy_gram_psd(seed):
    D, ou, X = _ou(4, 200, seed)
    gp = perturbed_matrices(D, ou, GEN, X, NoiseModel("gaussian", 0.5), stream(seed, "n"))
    assert np.linalg.eigvalsh(gp.G)[0] >= -1e-10 * np.linalg.norm(gp.G, 2)


def test_admissibility_examples():
    a = gaussian_admissibility(45, 1.0)
    assert a.gamma_tilde == 90.0
    assert a.p_bound == pytest.approx(1 - (2 / math.e) ** 22.5, rel=1e-14)
    assert 1 - a.p_bound == pytest.approx(1e-3, rel=0.05)
    z = gaussian_admissibility(45, 0.0)
    assert (z.p_bound, z.p_exact, z.p_slot) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_admissibility(0, 1.0)


def test_chi_square_against_monte_carlo():
    N, gam = 5, 8.0
    a = gaussian_admissibility(N, 1.0, gam)
    rng = np.random.default_rng(12)
    draws = 10**6
    joint = np.zeros(draws)
    slot = np.zeros(draws)
    for _ in range(2 * N):
        z = rng.standard_normal(draws) ** 2
        joint += z
    for _ in range(N):
        slot += rng.standard_normal(draws) ** 2
    for p, hits in ((a.p_exact, joint <= gam), (a.p_slot, slot <= gam)):
        sd = math.sqrt(p * (1 - p) / draws)
        assert abs(hits.mean() - p) <= 3 * sd
    # the Chernoff bound is a valid lower bound on the single-slot probability
    assert a.p_bound <= a.p_slot


def test_noisy_certificate():
    c = OperatorConstants(N=3, norm_G=3.8, norm_Ginv=2.7, norm_C=6.1, norm_T=10.4, gamma=120.0)
    base = projection_error_certificate(c, 0.01, 0.9)
    same = noisy_projection_certificate(c, 0.01, 0.9, 1.0, 0.0)
    assert same.required_M == base.required_M and same.result == "prop-projection"
    noisy = noisy_projection_certificate(c, 0.01, 0.9, 1.0 - 1e-12, c.gamma)
    assert noisy.required_M / base.required_M == pytest.approx(2.0, rel=1e-3)
    assert noisy.result == "prop-noise"
    ptil, gt = 0.99, 50.0
    F = (3 * 10.4 + 0.02) * 2 * (120.0 + gt) / (3 * 1e-4) * math.log(12 / (1 - 0.9 / ptil))
    assert noisy_projection_certificate(c, 0.01, 0.9, ptil, gt).required_M == math.floor(F) + 1
    eps = noisy_projection_certificate(c, None, 0.9, ptil, gt, epsilon=0.5)
    assert eps.result == "thm-OC-noise"
    with pytest.raises(BoundValidityError):
        noisy_projection_certificate(c, 0.01, 0.9, 0.85, gt)
    with pytest.raises(BoundValidityError):
        noisy_projection_certificate(c, 0.2, 0.9, 0.95, gt)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel("laplace", 1.0)
    with pytest.raises(ValueError):
        NoiseModel("gaussian", -1.0)
    with pytest.raises(ValueError):
        D, ou, X = _ou()
        perturbed_matrices(D, ou, GEN, X, NoiseModel("gaussian", 0.1), None)
