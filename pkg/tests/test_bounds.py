import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from koopmc.bounds import (
    BoundValidityError,
    CoverageProblem,
    OperatorConstants,
    bernstein_covariance_tail,
    oc_radius_at,
    oc_schedule,
    projection_error_certificate,
    required_M_gram,
    required_M_structure,
    residual_T_estimator,
    verify_coverage,
)
from koopmc.dictionary import OperatorSpec, gamma_n, monomials
from koopmc.estimator import empirical_matrices, reference_matrices
from koopmc.systems import SamplingMeasure, builtin_ou, sample_points

GEN = OperatorSpec("koopman_generator")


def ou_constants(k):
    ou = builtin_ou()
    D = monomials(1, k, ou.lower, ou.upper)
    ref = reference_matrices(D, ou, GEN, method="analytic")
    return D, ou, ref, OperatorConstants.from_reference(ref, gamma_n(D, ou, GEN))


def test_tail_limits():
    assert bernstein_covariance_tail(10**12, 9, 0.5, 18, 4, 4) == 0.0
    assert bernstein_covariance_tail(10**5, 9, 1e-12, 18, 4, 4) == 1.0


def test_tail_closed_form():
    # second evaluation straight from the formula, without log-space
    M, N, d, g, K = 10**5, 9, 0.5, 18.0, 4.0
    want = 2 * N * math.exp(-M * d**2 / 2 / (g * (K + 2 * d / 3)))
    assert bernstein_covariance_tail(M, N, d, g, K, K) == pytest.approx(want, rel=1e-12)
    assert bernstein_covariance_tail(M, N, d, g, K, 0.5 * K) == pytest.approx(want, rel=1e-12)


def test_gram_sample_size_hand_value():
    # (3*4 + 0.2) * 2*18/(3*0.01) * log(2*9/0.05) = 14640 log 360
    F = 14640 * math.log(360)
    assert required_M_gram(9, 0.1, 0.95, 18, 4) == math.floor(F) + 1
    assert required_M_structure(9, 0.1, 0.95, 18, 4, 3) == math.floor(F) + 1


def test_sample_size_scaling():
    ratio = required_M_gram(9, 1e-4, 0.9, 36, 4) / required_M_gram(9, 1e-4, 0.9, 18, 4)
    assert ratio == pytest.approx(2, rel=1e-3)
    assert required_M_structure(9, 1e-4, 0.9, 18, 4, 4) / required_M_structure(9, 2e-4, 0.9, 18, 4, 4) == pytest.approx(4, rel=1e-3)
    assert required_M_gram(9, 0.1, 1 - 1e-15, 18, 4) > required_M_gram(9, 0.1, 0.9, 18, 4) * 5


def test_order_of_convergence_scaling():
    # doubling each constant scales M by the predicted factor for small delta
    base = OperatorConstants(N=5, norm_G=2.0, norm_Ginv=3.0, norm_C=1.5, norm_T=1.0, gamma=20.0)
    eps = 1e-4
    M0 = oc_schedule(base, eps, 0.9).required_M
    def ratio(**kw):
        c = OperatorConstants(**{**base.__dict__, **kw})
        return oc_schedule(c, eps, 0.9).required_M / M0
    assert ratio(gamma=40.0) == pytest.approx(2, rel=0.1)
    # ||G|| enters K = max(||G||, ||T||) once and rho^2 through kappa once
    assert ratio(norm_G=4.0) == pytest.approx(4, rel=0.1)
    assert oc_schedule(base, eps / 2, 0.9).required_M / M0 == pytest.approx(4, rel=0.01)


@given(
    st.floats(1e-4, 0.1), st.floats(1e-4, 0.1), st.floats(0.05, 0.98), st.floats(0.05, 0.98)
)
def test_required_M_monotone(d1, d2, p1, p2):
    if d1 < d2:
        assert required_M_gram(9, d1, 0.9, 18, 4) >= required_M_gram(9, d2, 0.9, 18, 4)
    if p1 < p2:
        assert required_M_gram(9, 0.05, p1, 18, 4) <= required_M_gram(9, 0.05, p2, 18, 4)


def test_required_M_strict():
    Ms = [required_M_gram(9, d, 0.9, 18, 4) for d in (0.01, 0.02, 0.05, 0.1)]
    assert all(a > b for a, b in zip(Ms, Ms[1:]))
    Ms = [required_M_gram(9, 0.05, p, 18, 4) for p in (0.5, 0.8, 0.9, 0.99)]
    assert all(a < b for a, b in zip(Ms, Ms[1:]))


def test_validity_errors():
    with pytest.raises(BoundValidityError):
        required_M_gram(9, 0.2, 0.9, 18, 4, norm_Ginv=3.0)
    with pytest.raises(BoundValidityError):
        required_M_gram(9, 0.1, 1.0, 18, 4)
    with pytest.raises(BoundValidityError):
        required_M_gram(9, -0.1, 0.5, 18, 4)
    _, _, _, c = ou_constants(4)
    assert c.delta_max == pytest.approx(0.0436, abs=1e-4)
    with pytest.raises(BoundValidityError):
        projection_error_certificate(c, 0.05, 0.9)


def test_constants_invariants():
    for k in (1, 2, 4, 8):
        c = ou_constants(k)[3]
        assert c.kappa >= 1 and c.rho >= 1


def test_projection_certificate_closed_form():
    _, _, ref, c = ou_constants(2)
    rep = projection_error_certificate(c, 0.1, 0.9)
    G = ref.G
    nG, nGi = np.linalg.norm(G, 2), np.linalg.norm(np.linalg.inv(G), 2)
    nC, nT = np.linalg.norm(ref.C, 2), np.linalg.norm(ref.T, 2)
    rho = math.sqrt(nG * nGi) * (1 + nC * nGi)
    F = (3 * max(nG, nT) + 0.2) * 2 * c.gamma / (3 * 0.01) * math.log(4 * 3 / 0.1)
    assert rep.required_M == math.floor(F) + 1
    assert rep.radius == pytest.approx(2 * rho * nGi * 0.1, rel=1e-12)
    assert rep.result == "prop-projection" and rep.valid


def test_radius_collapse_and_monotone():
    c = OperatorConstants(N=3, norm_G=2.0, norm_Ginv=0.5, norm_C=0.0, norm_T=1.0, gamma=9.0)
    assert projection_error_certificate(c, 0.1, 0.9).radius == pytest.approx(2 * 0.5 * 0.1)
    r0 = projection_error_certificate(c, 0.1, 0.9).radius
    for kw in ({"norm_C": 1.0}, {"norm_Ginv": 0.9}, {"norm_G": 5.0}):
        c2 = OperatorConstants(**{**c.__dict__, **kw})
        assert projection_error_certificate(c2, 0.1, 0.9).radius > r0
    assert projection_error_certificate(c, 0.2, 0.9).radius > r0


def test_oc_schedule():
    c = OperatorConstants(N=3, norm_G=2.0, norm_Ginv=0.5, norm_C=1.0, norm_T=1.0, gamma=9.0)
    rep = oc_schedule(c, 0.999 * c.rho, 0.9)
    assert math.isfinite(rep.required_M)
    delta = 0.3 / (2 * c.rho * c.norm_Ginv)
    ref = projection_error_certificate(c, delta, 0.9)
    assert oc_schedule(c, 0.3, 0.9).required_M == ref.required_M
    with pytest.raises(BoundValidityError):
        oc_schedule(c, c.rho, 0.9)
    eps = oc_radius_at(c, 10**6, 0.9)
    assert oc_schedule(c, eps, 0.9).required_M <= 10**6 < oc_schedule(c, eps * (1 - 1e-4), 0.9).required_M
    assert oc_radius_at(c, 10, 0.9) == math.inf


def test_noise_collapse_in_certificate():
    c = ou_constants(2)[3]
    a = projection_error_certificate(c, 0.05, 0.9)
    b = projection_error_certificate(c, 0.05, 0.9, gamma_noise=0.0, p_noise=1.0)
    assert a == b


def test_residual_T():
    ou = builtin_ou()
    D = monomials(1, 3, ou.lower, ou.upper)
    X = sample_points(SamplingMeasure.on(ou), 500, 1)
    gp = empirical_matrices(D, ou, OperatorSpec("identity"), X)
    np.testing.assert_allclose(residual_T_estimator(D, ou, OperatorSpec("identity"), X), gp.G, rtol=1e-14)
    assert np.linalg.matrix_rank(residual_T_estimator(D, ou, GEN, X[:1])) <= 1
    ref = reference_matrices(D, ou, GEN, method="analytic")
    errs = []
    for M in (2**10, 2**16):
        T = residual_T_estimator(D, ou, GEN, sample_points(SamplingMeasure.on(ou), M, 2))
        errs.append(np.linalg.norm(T - ref.T, 2) / np.linalg.norm(ref.T, 2))
    assert errs[1] < errs[0] / 3


def test_coverage_contract():
    D, ou, ref, c = ou_constants(1)
    prob = CoverageProblem(D, ou, GEN, ref)
    res = verify_coverage("prop-projection", c, 0.1, 0.9, 200, 5, prob)
    assert res.threshold == pytest.approx(0.9 - 2 * math.sqrt(0.09 / 200))
    assert res.passed and res.frequency >= 0.857
    big = verify_coverage("lemma-C", c, 1e6, 0.9, 100, 5, prob, M=2)
    assert big.frequency == 1.0
    tiny = verify_coverage("lemma-C", c, 1e-6, 0.9, 100, 5, prob, M=1)
    assert tiny.frequency <= 0.05
    with pytest.raises(ValueError):
        verify_coverage("lemma-G", c, 0.1, 0.9, 50, 5, prob)
