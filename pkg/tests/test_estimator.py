import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from koopmc.dictionary import MeshSpec, OperatorSpec, fem_linear, gaussians, grid_centers, monomials
from koopmc.estimator import (
    GramPair,
    empirical_matrices,
    export_csv,
    galerkin_matrix,
    matrix_error,
    operator_norm,
    operator_norm_bound,
    projection_error,
    reference_matrices,
    solve_estimator,
)
from koopmc.harness.sweeps import fit_slope
from koopmc.systems import ObservableProbe, SamplingMeasure, builtin_double_well, builtin_ode, builtin_ou, sample_points
from koopmc._rng import stream

GEN = OperatorSpec("koopman_generator")
IDENT = OperatorSpec("identity")


def ou_exact_matrix(k):
    """Column n holds L x^n = -n x^n + n(n-1)/4 x^(n-2)."""
    A = np.zeros((k + 1, k + 1))
    for n in range(k + 1):
        A[n, n] = -n
        if n >= 2:
            A[n - 2, n] = n * (n - 1) / 4
    return A


def analytic_gram(k):
    i = np.arange(k + 1)
    s = i[:, None] + i[None, :]
    return np.where(s % 2 == 0, 2.0**s / (s + 1), 0.0)


def test_tiny_grams():
    one = monomials(1, 0, (-2,), (2,))
    X = sample_points(SamplingMeasure.uniform(-2, 2), 17, 0)
    np.testing.assert_array_equal(empirical_matrices(one, builtin_ou(), IDENT, X).G, [[1.0]])
    lin = monomials(1, 1, (-2,), (2,))
    G = empirical_matrices(lin, builtin_ou(), IDENT, np.array([[-1.0], [1.0]])).G
    np.testing.assert_array_equal(G, np.eye(2))


def test_gram_lln_entry():
    D = monomials(1, 2, (-2,), (2,))
    X = sample_points(SamplingMeasure.uniform(-2, 2), 10**6, 3)
    assert empirical_matrices(D, builtin_ou(), IDENT, X).G[2, 2] == pytest.approx(16 / 5, abs=0.05)


@pytest.mark.parametrize("method", ["analytic", "quadrature"])
def test_reference_gram_and_ou_structure(method):
    ou = builtin_ou()
    D = monomials(1, 8, ou.lower, ou.upper)
    ref = reference_matrices(D, ou, GEN, method=method)
    G = analytic_gram(8)
    np.testing.assert_allclose(ref.G, G, rtol=1e-12, atol=1e-12)
    A = ou_exact_matrix(8)
    # column convention: C = A^T G
    np.testing.assert_allclose(ref.C, A.T @ G, rtol=1e-10, atol=1e-9)
    np.testing.assert_allclose(galerkin_matrix(ref), A, atol=1e-8)
    ident = reference_matrices(D, ou, IDENT, method=method)
    np.testing.assert_allclose(ident.T, ident.G, rtol=1e-12, atol=1e-11)


def test_reference_invariants():
    ode = builtin_ode()
    for D in (monomials(2, 3, ode.lower, ode.upper), gaussians(grid_centers(ode.lower, ode.upper, (4, 3)), 0.4, ode.lower, ode.upper)):
        ref = reference_matrices(D, ode, GEN)
        assert np.linalg.eigvalsh(ref.G)[0] > 0
        np.testing.assert_array_equal(ref.T, ref.T.T)
        assert np.linalg.eigvalsh(ref.T)[0] >= -1e-10 * np.linalg.norm(ref.T, 2)


def test_identity_gram_gives_C():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(4, 4))
    est = solve_estimator(GramPair(np.eye(4), C, 10, "koopman_generator", None))
    np.testing.assert_allclose(est.A.T, C, atol=1e-15)


def test_invariance_exact_recovery():
    ou = builtin_ou()
    D = monomials(1, 8, ou.lower, ou.upper)
    A = ou_exact_matrix(8)
    for r in range(5):
        X = sample_points(SamplingMeasure.on(ou), 2 * D.size + 3, r)
        est = solve_estimator(empirical_matrices(D, ou, GEN, X))
        if est.rank == D.size:
            assert matrix_error(est.A, A)[1] <= 1e-8


def _random_problem(data, singular):
    seed = data.draw(st.integers(0, 2**32 - 1))
    which = data.draw(st.sampled_from(["ou", "ode", "fem"]))
    if which == "ou":
        s = builtin_ou()
        D = monomials(1, 5, s.lower, s.upper)
    elif which == "ode":
        s = builtin_ode()
        D = monomials(2, 3, s.lower, s.upper)
    else:
        s = builtin_ou()
        D = fem_linear(MeshSpec.for_interior(s.lower, s.upper, (7,)))
    op = OperatorSpec("koopman_generator", ibp="divergence") if which == "fem" else GEN
    M = data.draw(st.integers(1, D.size - 1)) if singular else data.draw(st.integers(3 * D.size, 8 * D.size))
    X = sample_points(SamplingMeasure.on(s), M, seed)
    return empirical_matrices(D, s, op, X, stream(seed, "dyn"))


@given(st.data(), st.booleans())
def test_gram_psd(data, singular):
    gp = _random_problem(data, singular)
    np.testing.assert_array_equal(gp.G, gp.G.T)
    assert np.linalg.eigvalsh(gp.G)[0] >= -1e-10 * np.linalg.norm(gp.G, 2)


@given(st.data(), st.booleans())
def test_projection_optimality(data, singular):
    gp = _random_problem(data, singular)
    est = solve_estimator(gp)
    scale = max(np.linalg.norm(gp.C, 2), 1e-300)
    target = gp.C
    if gp.ibp is not None:
        # weak-form rows need not lie in the row space of a singular G
        target = gp.C @ np.linalg.pinv(gp.G, rcond=gp.N * np.finfo(float).eps) @ gp.G
    assert np.linalg.norm(est.A.T @ gp.G - target, 2) <= 1e-8 * scale
    if singular:
        assert est.rank <= gp.M


def test_singular_gram_beats_random_candidates():
    ou = builtin_ou()
    D = monomials(1, 6, ou.lower, ou.upper)
    X = sample_points(SamplingMeasure.on(ou), 4, 8)
    gp = empirical_matrices(D, ou, GEN, X)
    best = np.linalg.norm(gp.C - solve_estimator(gp).A.T @ gp.G, "fro")
    rng = np.random.default_rng(1)
    A = solve_estimator(gp).A
    for _ in range(100):
        cand = A + rng.normal(scale=rng.uniform(1e-3, 1), size=A.shape)
        assert best <= np.linalg.norm(gp.C - cand.T @ gp.G, "fro") + 1e-12


def test_matrix_error_examples():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(3, 3))
    assert matrix_error(A, A) == (0.0, 0.0)
    assert matrix_error(2 * A, A)[1] == pytest.approx(1.0, rel=1e-14)
    B = rng.normal(size=(3, 3))
    D = A - B
    # power iteration on D^T D as the independent oracle
    v = np.ones(3)
    for _ in range(2000):
        v = D.T @ (D @ v)
        v /= np.linalg.norm(v)
    assert matrix_error(B, A)[0] == pytest.approx(np.linalg.norm(D @ v), rel=1e-10)
    assert matrix_error(B, A, "frobenius")[0] == pytest.approx(np.sqrt((D**2).sum()))
    with pytest.raises(ZeroDivisionError):
        matrix_error(A, np.zeros((3, 3)))


def test_operator_norm_examples():
    rng = np.random.default_rng(3)
    T = rng.normal(size=(3, 3))
    assert operator_norm(T, np.eye(3)) == pytest.approx(np.linalg.norm(T, 2))
    assert operator_norm_bound(T, np.eye(3)) == pytest.approx(np.linalg.norm(T, 2))
    G = np.diag([1.0, 4.0])
    T = np.array([[0.0, 1.0], [0.0, 0.0]])
    # G^{1/2} T G^{-1/2} = [[0, 1/2], [0, 0]]
    assert operator_norm(T, G) == pytest.approx(0.5)
    assert operator_norm(T.T, G) == pytest.approx(2.0)
    assert operator_norm_bound(T, G) == pytest.approx(2.0)
    assert operator_norm_bound(T.T, G) == pytest.approx(2.0)


@st.composite
def pd_and_matrix(draw):
    n = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    G = B @ B.T + draw(st.floats(1e-3, 2.0)) * np.eye(n)
    return G, rng.normal(size=(n, n)) * draw(st.floats(1e-3, 1e3)), rng


@given(pd_and_matrix())
def test_operator_norm_lemma(args):
    G, T, _ = args
    assert operator_norm(T, G) <= operator_norm_bound(T, G) * (1 + 1e-12) + 1e-12


@given(pd_and_matrix())
def test_operator_norm_basis_invariance(args):
    G, T, rng = args
    n = G.shape[0]
    S = rng.normal(size=(n, n)) + 3 * np.eye(n)
    T2 = np.linalg.solve(S, T @ S)
    G2 = S.T @ G @ S
    G2 = 0.5 * (G2 + G2.T)
    assert operator_norm(T2, G2) == pytest.approx(operator_norm(T, G), rel=1e-8)


def _poly(n):
    return ObservableProbe(
        lambda X: X[:, 0] ** n,
        lambda X: n * X ** (n - 1),
        lambda X: (n * (n - 1) * X ** max(n - 2, 0))[:, :, None],
    )


def test_projection_error_invariant():
    ou = builtin_ou()
    for k in (3, 5, 8):
        D = monomials(1, k, ou.lower, ou.upper)
        assert projection_error(D, ou, GEN, _poly(3)) <= 1e-8


def test_projection_error_sin_sequence():
    ou = builtin_ou()
    sin = ObservableProbe(lambda X: np.sin(X[:, 0]), np.cos, lambda X: -np.sin(X)[:, :, None])
    errs = [projection_error(monomials(1, k, ou.lower, ou.upper), ou, GEN, sin, order=16) for k in range(2, 9)]
    # sin is odd: adding an even degree leaves the projection unchanged
    assert all(b <= a * (1 + 1e-8) for a, b in zip(errs, errs[1:]))
    odd = errs[1::2]
    assert all(b < a for a, b in zip(odd, odd[1:]))


def test_lln_slope():
    # the OU Koopman generator is exact on monomials, so the data-limit rate
    # is checked on its adjoint
    ou = builtin_ou()
    D = monomials(1, 4, ou.lower, ou.upper)
    op = OperatorSpec("pf_generator")
    A = galerkin_matrix(reference_matrices(D, ou, op, method="analytic"))
    pts = []
    for M in [2**k for k in range(8, 17)]:
        e = [
            matrix_error(solve_estimator(empirical_matrices(D, ou, op, sample_points(SamplingMeasure.on(ou), M, s, "lln", M))).A, A)[1]
            for s in range(20)
        ]
        pts.append((M, np.mean(e)))
    slope, _ = fit_slope(pts)
    assert -0.65 <= slope <= -0.35


def test_weak_form_matches_pointwise_on_smooth_basis():
    # integration by parts against uniform measure is exact for hats vanishing on the boundary
    dw = builtin_double_well()
    D = fem_linear(MeshSpec.for_interior(dw.lower, dw.upper, (5, 3)))
    weak = reference_matrices(D, dw, OperatorSpec("koopman_generator", ibp="divergence"), panels=(12, 8))
    assert weak.T is None
    ou = builtin_ou()
    Dm = gaussians(grid_centers((-1.0,), (1.0,), (3,)), 0.25, ou.lower, ou.upper)
    strong = reference_matrices(Dm, ou, GEN, order=16)
    mu = SamplingMeasure.on(ou)
    # Gaussians do not vanish on the boundary, so compare with a wide domain where they nearly do
    wide = SamplingMeasure.uniform(-6, 6)
    s = reference_matrices(Dm, ou, GEN, wide, order=16, panels=(96,))
    w = reference_matrices(Dm, ou, OperatorSpec("koopman_generator", ibp="divergence"), wide, order=16, panels=(96,))
    np.testing.assert_allclose(w.C, s.C, atol=1e-10)
    assert strong.G.shape == (3, 3) and mu.dim == 1


def test_export_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    A = rng.normal(size=(3, 4))
    export_csv(A, tmp_path / "a.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "a.csv", delimiter=","), A)
