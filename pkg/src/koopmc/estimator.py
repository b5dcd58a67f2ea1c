"""Empirical and reference Galerkin matrices and the pseudoinverse estimator.

Convention: an operator with matrix ``A`` acts on the dictionary through
``A psi_j = sum_i A_ij psi_i``. With ``C_ij = <A psi_i, psi_j>`` and
``G_ij = <psi_i, psi_j>`` this gives ``C = A^T G`` and the estimator
``A^T = C G^+``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .dictionary import (
    Dictionary,
    OperatorSpec,
    SmoothnessMismatchError,
    apply_operator_row,
)
from .systems import DynamicalSystem, ObservableProbe, SamplingMeasure, apply_generator, apply_pf_generator, sample_points

__all__ = [
    "GramPair",
    "Evaluations",
    "ReferenceMatrices",
    "EstimationResult",
    "MethodUnavailableError",
    "iter_evaluations",
    "assemble",
    "empirical_matrices",
    "residual_matrix",
    "quadrature_rule",
    "reference_matrices",
    "galerkin_matrix",
    "solve_estimator",
    "matrix_norm",
    "matrix_error",
    "operator_norm",
    "operator_norm_bound",
    "projection_error",
    "export_csv",
]


class MethodUnavailableError(ValueError):
    """A reference method cannot handle this dictionary, operator or measure."""


@dataclass(frozen=True)
class GramPair:
    """Empirical ``G`` and ``C`` from ``M`` samples (``T`` when it was requested)."""

    G: np.ndarray
    C: np.ndarray
    M: int
    operator: str
    ibp: str | None = None
    T: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.G.shape[0]


@dataclass
class Evaluations:
    """Dictionary data on a block of points.

    ``apsi`` holds pointwise operator values. The weak form instead stores
    gradients, the transport field ``v`` and ``Sigma``. ``transpose`` marks
    the Perron-Frobenius generator: its data are Koopman generator data and
    its structure matrix is the transpose of the Koopman one.
    """

    psi: np.ndarray
    apsi: np.ndarray | None = None
    grad: np.ndarray | None = None
    v: np.ndarray | None = None
    cov: np.ndarray | None = None
    transpose: bool = False

    @property
    def weak(self) -> bool:
        return self.apsi is None


@dataclass(frozen=True)
class ReferenceMatrices:
    G: np.ndarray
    C: np.ndarray
    T: np.ndarray | None
    provenance: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class EstimationResult:
    A: np.ndarray
    gram: GramPair
    rank: int
    trunc_count: int
    singular_values: np.ndarray


_KOOPMAN_GEN = OperatorSpec("koopman_generator")


def _chunk_size(dictionary: Dictionary) -> int:
    per_point = dictionary.size * dictionary.dim * max(dictionary.dim, 2)
    return int(max(64, min(8192, 2**22 // max(per_point, 1))))


def _evaluate_block(dictionary, sys, op, X, rng) -> Evaluations:
    psi = dictionary.evaluate(X)
    if op.kind == "identity":
        return Evaluations(psi, psi)
    # the Perron-Frobenius generator is estimated as the L^2(mu) adjoint:
    # Koopman generator data with the structure matrix transposed
    pf = op.kind == "pf_generator"
    if op.is_generator and op.ibp is not None and sys.stochastic:
        grad = dictionary.gradient(X)
        cov = sys.covariance(X)
        if op.ibp == "divergence":
            v = sys.drift(X) - 0.5 * sys.div_sigma(X)
        else:
            v = None
        return Evaluations(psi, None, grad, v, cov, transpose=pf)
    kop = _KOOPMAN_GEN if pf else op
    return Evaluations(psi, apply_operator_row(dictionary, sys, kop, X, rng), transpose=pf)


def iter_evaluations(
    dictionary: Dictionary,
    sys: DynamicalSystem,
    op: OperatorSpec,
    X: np.ndarray,
    rng: np.random.Generator | None = None,
    chunk: int | None = None,
) -> Iterator[tuple[slice, Evaluations]]:
    """Yield ``(rows, evaluations)`` over consecutive blocks of ``X`` in order."""
    X = np.atleast_2d(np.asarray(X, float))
    chunk = chunk or _chunk_size(dictionary)
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, min(start + chunk, X.shape[0]))
        ev = _evaluate_block(dictionary, sys, op, X[sl], rng)
        for name in ("psi", "apsi", "grad"):
            a = getattr(ev, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite dictionary data in samples {sl.start}..{sl.stop - 1}")
        yield sl, ev


def _block_sums(ev: Evaluations, w=None, want_T=False):
    P = ev.psi if w is None else ev.psi * w[:, None]
    G = ev.psi.T @ P
    if not ev.weak:
        C = ev.apsi.T @ P
        T = ev.apsi.T @ (ev.apsi if w is None else ev.apsi * w[:, None]) if want_T else None
        return G, (C.T if ev.transpose else C), T
    if want_T:
        raise SmoothnessMismatchError("T needs pointwise operator values, unavailable in weak form")
    grad = ev.grad if w is None else ev.grad * w[:, None, None]
    C = -0.5 * np.einsum("mnk,mkl,mpl->np", grad, ev.cov, ev.grad, optimize=True)
    if ev.v is not None:
        C += np.einsum("mnk,mk->mn", ev.grad, ev.v).T @ P
    return G, (C.T if ev.transpose else C), None


def assemble(blocks, total_weight: float, want_T: bool = False, weights=None):
    """Sum block contributions in order and normalise; returns ``(G, C, T)``."""
    G = C = T = None
    for sl, ev in blocks:
        w = None if weights is None else weights[sl]
        g, c, t = _block_sums(ev, w, want_T)
        if G is None:
            G, C, T = g, c, t
        else:
            G += g
            C += c
            if want_T:
                T += t
    G /= total_weight
    C /= total_weight
    if want_T:
        T /= total_weight
    # symmetrise against roundoff in the block sums
    G = 0.5 * (G + G.T)
    if want_T:
        T = 0.5 * (T + T.T)
    return G, C, T


def empirical_matrices(
    dictionary: Dictionary,
    sys: DynamicalSystem,
    op: OperatorSpec,
    points,
    rng: np.random.Generator | None = None,
    *,
    with_T: bool = False,
) -> GramPair:
    """Empirical Gram and structure matrices, ``G_ij = mean psi_i psi_j``, ``C_ij = mean A psi_i psi_j``.

    Parameters
    ----------
    dictionary, sys, op
        Basis, dynamics and operator description.
    points : array_like, shape (M, d)
        Sample points.
    rng : numpy.random.Generator, optional
        Source of Wiener increments for the stochastic Koopman operator.
    with_T : bool
        Also return ``T_ij = mean A psi_i A psi_j``.
    """
    X = np.atleast_2d(np.asarray(points, float))
    if X.shape[0] < 1:
        raise ValueError("need at least one sample point")
    G, C, T = assemble(iter_evaluations(dictionary, sys, op, X, rng), X.shape[0], with_T)
    return GramPair(G, C, X.shape[0], op.kind, op.ibp if sys.stochastic else None, T)


def residual_matrix(dictionary, sys, op, points, rng=None) -> np.ndarray:
    """Empirical ``T_ij = (1/M) sum_m A psi_i(x_m) A psi_j(x_m)``."""
    return empirical_matrices(dictionary, sys, op, points, rng, with_T=True).T


# --- reference matrices -------------------------------------------------------


def quadrature_rule(lower, upper, panels, order: int):
    """Composite tensor Gauss-Legendre rule normalised to a probability measure.

    Returns nodes ``(Q, d)`` and weights ``(Q,)`` summing to one.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi, n in zip(lower, upper, panels):
        edges = np.linspace(lo, hi, n + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel() / (hi - lo))
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrid = np.ones(())
    for wk in weights:
        wgrid = np.multiply.outer(wgrid, wk)
    return np.stack([g.ravel() for g in grids], axis=1), wgrid.ravel()


def _monomial_gram(dictionary, lower, upper) -> np.ndarray:
    E = dictionary.exponents
    S = E[:, None, :] + E[None, :, :]
    out = np.ones(S.shape[:2])
    for k, (lo, hi) in enumerate(zip(lower, upper)):
        p = S[:, :, k]
        out *= (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo))
    return out


def reference_matrices(
    dictionary: Dictionary,
    sys: DynamicalSystem,
    op: OperatorSpec,
    measure: SamplingMeasure | None = None,
    method: str = "quadrature",
    *,
    order: int = 8,
    panels: tuple | None = None,
    M_ref: int = 2**17,
    seed: int = 20240101,
    with_T: bool = True,
) -> ReferenceMatrices:
    """``G``, ``C`` and ``T`` for the sampling measure.

    ``method`` is ``"analytic"`` (monomials on a uniform box: closed form
    Gram matrix and exact polynomial quadrature otherwise),
    ``"quadrature"`` (composite tensor Gauss-Legendre with ``order`` points
    per panel) or ``"monte_carlo"`` (empirical matrices at ``M_ref`` samples
    drawn with ``seed``).
    """
    measure = measure or SamplingMeasure.on(sys)
    if with_T and op.is_generator and op.ibp is not None and sys.stochastic:
        with_T = False
    if method == "monte_carlo":
        X = sample_points(measure, M_ref, seed, "reference")
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
        gp = empirical_matrices(dictionary, sys, op, X, rng, with_T=with_T)
        return ReferenceMatrices(gp.G, gp.C, gp.T, {"method": method, "M_ref": M_ref, "seed": seed})

    if measure.kind != "uniform":
        raise MethodUnavailableError(f"{method} references need a uniform measure")
    if op.kind == "koopman_t" and sys.stochastic:
        raise MethodUnavailableError("stochastic Koopman operator has no pointwise values; use monte_carlo")
    lo, hi = measure.lower, measure.upper
    if method == "analytic":
        if dictionary.family != "monomials":
            raise MethodUnavailableError("analytic references exist for monomials only")
        # drift and diffusion of the builtins are polynomials of degree <= 3
        deg = 2 * dictionary.degree + 6
        X, w = quadrature_rule(lo, hi, (1,) * len(lo), deg // 2 + 1)
        G0 = _monomial_gram(dictionary, lo, hi)
    elif method == "quadrature":
        X, w = quadrature_rule(lo, hi, panels or dictionary.quadrature_panels(lo, hi), order)
        G0 = None
    else:
        raise MethodUnavailableError(f"unknown reference method {method!r}")
    blocks = iter_evaluations(dictionary, sys, op, X, None)
    G, C, T = assemble(blocks, 1.0, with_T, weights=w)
    if G0 is not None:
        G = G0
    prov = {"method": method, "order": order if method == "quadrature" else None}
    return ReferenceMatrices(G, C, T, prov)


def galerkin_matrix(ref: ReferenceMatrices | GramPair) -> np.ndarray:
    """``A_N = G^{-1} C^T``, the matrix of the Galerkin projection."""
    return np.linalg.solve(ref.G, ref.C.T)


# --- estimator ----------------------------------------------------------------


def solve_estimator(gp: GramPair, rcond: float | None = None) -> EstimationResult:
    """Pseudoinverse estimator ``A^T = C G^+``.

    Singular values of ``G`` at or below ``rcond * sigma_max`` are discarded;
    ``rcond`` defaults to ``N * eps``.
    """
    N = gp.N
    if rcond is None:
        rcond = N * np.finfo(float).eps
    U, s, Vt = np.linalg.svd(gp.G)
    smax = s[0] if s.size else 0.0
    keep = s > rcond * smax
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    Gpinv = (Vt.T * inv) @ U.T
    A = (gp.C @ Gpinv).T
    return EstimationResult(A, gp, int(keep.sum()), int(N - keep.sum()), s)


def matrix_norm(A, norm: str = "spectral") -> float:
    if norm == "spectral":
        return float(np.linalg.norm(A, 2))
    if norm == "frobenius":
        return float(np.linalg.norm(A, "fro"))
    raise ValueError(f"unknown norm {norm!r}")


def matrix_error(A_hat, A_ref, norm: str = "spectral") -> tuple[float, float]:
    """Absolute and normalised error ``||A_ref - A_hat|| / ||A_ref||``."""
    A_hat, A_ref = np.asarray(A_hat), np.asarray(A_ref)
    if A_hat.shape != A_ref.shape:
        raise ValueError(f"shape mismatch {A_hat.shape} vs {A_ref.shape}")
    ref = matrix_norm(A_ref, norm)
    if ref == 0:
        raise ZeroDivisionError("reference matrix has zero norm")
    err = matrix_norm(A_ref - A_hat, norm)
    return err, err / ref


def _sqrt_pd(G):
    G = np.asarray(G, float)
    if not np.allclose(G, G.T, rtol=1e-10, atol=1e-14 * np.abs(G).max()):
        raise np.linalg.LinAlgError("G is not symmetric")
    lam, V = np.linalg.eigh(0.5 * (G + G.T))
    if lam[0] <= 0:
        raise np.linalg.LinAlgError("G is not positive definite")
    return lam, V


def operator_norm(T, G) -> float:
    """``L^2(mu)`` norm of the operator with matrix ``T``: ``||G^{1/2} T G^{-1/2}||_2``."""
    lam, V = _sqrt_pd(G)
    r = np.sqrt(lam)
    B = (V * r) @ V.T @ np.asarray(T) @ (V / r) @ V.T
    return float(np.linalg.norm(B, 2))


def operator_norm_bound(T, G) -> float:
    """Upper bound ``sqrt(kappa(G)) ||T||_2`` for :func:`operator_norm`."""
    lam, _ = _sqrt_pd(G)
    return float(np.sqrt(lam[-1] / lam[0]) * np.linalg.norm(T, 2))


def projection_error(
    dictionary: Dictionary,
    sys: DynamicalSystem,
    op: OperatorSpec,
    f: ObservableProbe,
    measure: SamplingMeasure | None = None,
    *,
    order: int = 12,
    panels: tuple | None = None,
) -> float:
    """``|| A_N P_D f - A f ||_{L^2(mu)}`` by quadrature.

    ``P_D`` projects orthogonally in the graph inner product
    ``<f, g>_D = <f, g> + <A f, A g>`` whose Gram matrix is ``G + T``.
    """
    if op.kind not in ("koopman_generator", "pf_generator"):
        raise MethodUnavailableError("projection error is implemented for generators")
    measure = measure or SamplingMeasure.on(sys)
    if measure.kind != "uniform":
        raise MethodUnavailableError("quadrature needs a uniform measure")
    lo, hi = measure.lower, measure.upper
    X, w = quadrature_rule(lo, hi, panels or dictionary.quadrature_panels(lo, hi), order)
    psi = dictionary.evaluate(X)
    apsi = apply_operator_row(dictionary, sys, op, X)
    apply = apply_generator if op.kind == "koopman_generator" else apply_pf_generator
    fv, af = f.value(X), apply(sys, f, X)
    G = psi.T @ (psi * w[:, None])
    C = apsi.T @ (psi * w[:, None])
    T = apsi.T @ (apsi * w[:, None])
    rhs = psi.T @ (w * fv) + apsi.T @ (w * af)
    c = np.linalg.solve(G + T, rhs)
    A = np.linalg.solve(G, C.T)
    resid = psi @ (A @ c) - af
    return float(np.sqrt(np.sum(w * resid**2)))


def export_csv(matrix, path) -> None:
    """Row-major CSV with 17 significant digits."""
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
