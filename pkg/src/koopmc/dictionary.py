"""Dictionaries of observables and pointwise operator application.

Three families are provided: graded-lex monomials, isotropic Gaussians and
piecewise (multi)linear finite element hats with zero boundary values. All
evaluation routines are vectorised over points: ``evaluate(X)`` maps an
``(M, d)`` array to ``(M, N)``, ``gradient`` to ``(M, N, d)`` and ``hessian``
to ``(M, N, d, d)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import optimize

from .systems import DynamicalSystem, koopman_apply_mc

__all__ = [
    "Dictionary",
    "Monomials",
    "Gaussians",
    "FEMLinear",
    "MeshSpec",
    "OperatorSpec",
    "HessianUnavailableError",
    "SmoothnessMismatchError",
    "monomials",
    "gaussians",
    "fem_linear",
    "grid_centers",
    "quadrant_centers",
    "apply_operator_row",
    "operator_sup_bound",
    "gamma_n",
]

OPERATOR_KINDS = ("identity", "koopman_generator", "pf_generator", "koopman_t")
IBP_MODES = (None, "reversible", "divergence")


class HessianUnavailableError(NotImplementedError):
    """The dictionary is only once weakly differentiable."""


class SmoothnessMismatchError(ValueError):
    """The operator needs derivatives the dictionary cannot supply pointwise."""


@dataclass(frozen=True)
class OperatorSpec:
    """Which operator is approximated and how its data are produced.

    ``kind`` is one of ``identity``, ``koopman_generator``, ``pf_generator``
    or ``koopman_t``. For ``koopman_t`` the lag ``t``, step ``h`` and number of
    realizations per sample are used. ``ibp`` selects the weak form of the
    structure matrix for second-order generators: ``"reversible"`` keeps only
    ``-1/2 <Sigma grad psi_i, grad psi_j>``; ``"divergence"`` is the exact
    integration by parts for uniform sampling with zero boundary values,
    which adds the transport term ``<(b - 1/2 div Sigma) . grad psi_i, psi_j>``.
    """

    kind: str = "koopman_generator"
    t: float = 0.1
    h: float = 1e-3
    n_realizations: int = 1
    ibp: str | None = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.ibp not in IBP_MODES:
            raise ValueError(f"unknown integration-by-parts mode {self.ibp!r}")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")

    @property
    def is_generator(self) -> bool:
        return self.kind in ("koopman_generator", "pf_generator")

    def label(self) -> str:
        return self.kind


class Dictionary:
    """Base class; subclasses fill in ``evaluate``, ``gradient`` and ``hessian``."""

    family = "abstract"
    smoothness = "C-infinity"
    size: int
    dim: int

    @property
    def has_hessian(self) -> bool:
        return self.smoothness == "C-infinity"

    def __len__(self) -> int:
        return self.size

    def evaluate(self, X) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, X) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, X) -> np.ndarray:
        raise HessianUnavailableError(f"{self.family} dictionary has no pointwise Hessian")

    def sup_bound(self) -> float:
        """``gamma_N`` with ``|Psi(x)|^2 <= gamma_N`` on the domain."""
        raise NotImplementedError

    def quadrature_panels(self, lower, upper) -> tuple[int, ...]:
        """Panels per axis for composite quadrature over the box."""
        return (1,) * self.dim

    def describe(self) -> dict:
        return {"family": self.family, "N": self.size}


def _graded_lex(d: int, k: int) -> np.ndarray:
    exps = []
    for deg in range(k + 1):
        # lexicographically descending compositions of deg into d parts
        for combo in itertools.product(range(deg, -1, -1), repeat=d):
            if sum(combo) == deg:
                exps.append(combo)
    return np.array(exps, dtype=int).reshape(-1, d)


class Monomials(Dictionary):
    family = "monomials"

    def __init__(self, d: int, k: int, lower=None, upper=None):
        if k < 0 or d < 1:
            raise ValueError("need d >= 1 and k >= 0")
        self.dim, self.degree = d, k
        self.exponents = _graded_lex(d, k)
        self.size = len(self.exponents)
        assert self.size == comb(k + d, k)
        self.lower = tuple(lower) if lower is not None else (-1.0,) * d
        self.upper = tuple(upper) if upper is not None else (1.0,) * d

    def _powers(self, X, shift):
        # value of prod_k x_k^(E_nk - shift_k), zero where the exponent goes negative
        E = self.exponents - np.asarray(shift)[None, :]
        out = np.ones((X.shape[0], self.size))
        for k in range(self.dim):
            e = E[:, k]
            table = X[:, k : k + 1] ** np.clip(e, 0, None)[None, :]
            out *= np.where(e[None, :] < 0, 0.0, table)
        return out

    def evaluate(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return self._powers(X, np.zeros(self.dim, int))

    def gradient(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        out = np.empty((X.shape[0], self.size, self.dim))
        for i in range(self.dim):
            shift = np.zeros(self.dim, int)
            shift[i] = 1
            out[:, :, i] = self.exponents[:, i] * self._powers(X, shift)
        return out

    def hessian(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        E = self.exponents
        out = np.empty((X.shape[0], self.size, self.dim, self.dim))
        for i in range(self.dim):
            for j in range(i, self.dim):
                shift = np.zeros(self.dim, int)
                shift[i] += 1
                shift[j] += 1
                coef = E[:, i] * (E[:, i] - 1) if i == j else E[:, i] * E[:, j]
                out[:, :, i, j] = coef * self._powers(X, shift)
                out[:, :, j, i] = out[:, :, i, j]
        return out

    def sup_bound(self) -> float:
        c = np.maximum(np.abs(self.lower), np.abs(self.upper))
        return float(np.sum(np.prod(c[None, :] ** (2 * self.exponents), axis=1)))

    def quadrature_panels(self, lower, upper):
        return (max(2, self.degree),) * self.dim

    def describe(self):
        return {"family": self.family, "N": self.size, "degree": self.degree}


def grid_centers(lower, upper, counts) -> np.ndarray:
    """Equidistant grid including the box faces; first axis varies slowest."""
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, counts)]
    return np.array(list(itertools.product(*axes)), dtype=float)


def quadrant_centers(lower, upper, N: int) -> np.ndarray:
    """Centres of ``N`` equal sub-boxes (``N**(1/d)`` cells per axis)."""
    d = len(lower)
    n = int(round(N ** (1.0 / d)))
    if n**d != N:
        raise ValueError(f"N={N} is not a perfect {d}-th power")
    axes = []
    for lo, hi in zip(lower, upper):
        w = (hi - lo) / n
        axes.append(lo + w * (np.arange(n) + 0.5))
    return np.array(list(itertools.product(*axes)), dtype=float)


class Gaussians(Dictionary):
    family = "gaussians"

    def __init__(self, centers, theta: float, lower=None, upper=None):
        P = np.atleast_2d(np.asarray(centers, float))
        if theta <= 0:
            raise ValueError("bandwidth must be positive")
        if len(np.unique(P, axis=0)) != len(P):
            raise ValueError("duplicate Gaussian centres")
        self.centers, self.theta = P, float(theta)
        self.size, self.dim = P.shape
        self.lower = tuple(lower) if lower is not None else tuple(P.min(0))
        self.upper = tuple(upper) if upper is not None else tuple(P.max(0))

    def _diff(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return X[:, None, :] - self.centers[None, :, :]

    def evaluate(self, X):
        D = self._diff(X)
        return np.exp(-np.einsum("mnd,mnd->mn", D, D) / (2 * self.theta**2))

    def gradient(self, X):
        D = self._diff(X)
        psi = np.exp(-np.einsum("mnd,mnd->mn", D, D) / (2 * self.theta**2))
        return -D / self.theta**2 * psi[..., None]

    def hessian(self, X):
        D = self._diff(X)
        t2 = self.theta**2
        psi = np.exp(-np.einsum("mnd,mnd->mn", D, D) / (2 * t2))
        H = D[..., :, None] * D[..., None, :] / t2**2 - np.eye(self.dim) / t2
        return H * psi[..., None, None]

    def sup_bound(self) -> float:
        return float(self.size)

    def quadrature_panels(self, lower, upper):
        # about one panel per bandwidth, so narrow bumps are resolved
        w = np.subtract(upper, lower)
        return tuple(int(min(2048, max(8, np.ceil(wi / self.theta)))) for wi in w)

    def describe(self):
        return {"family": self.family, "N": self.size, "theta": self.theta}


@dataclass(frozen=True)
class MeshSpec:
    """Uniform tensor mesh: ``cells[k]`` cells along axis ``k`` of the box."""

    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        if len(self.lower) != len(self.cells) or len(self.upper) != len(self.cells):
            raise ValueError("mesh bounds and cell counts disagree in dimension")
        if any(c < 2 for c in self.cells):
            raise ValueError("need at least two cells per axis for an interior vertex")
        if any(h <= lo for lo, h in zip(self.lower, self.upper)):
            raise ValueError("mesh box must have positive extent")

    @classmethod
    def for_interior(cls, lower, upper, interior) -> "MeshSpec":
        return cls(tuple(map(float, lower)), tuple(map(float, upper)), tuple(int(n) + 1 for n in interior))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower) / np.asarray(self.cells)

    @property
    def interior_counts(self) -> tuple:
        return tuple(c - 1 for c in self.cells)

    @property
    def n_interior(self) -> int:
        return int(np.prod(self.interior_counts))

    def axis_nodes(self, k: int, interior: bool = True) -> np.ndarray:
        n = self.cells[k]
        idx = np.arange(1, n) if interior else np.arange(n + 1)
        return self.lower[k] + self.spacing[k] * idx

    @property
    def vertices(self) -> np.ndarray:
        """All mesh vertices, boundary included."""
        return np.array(list(itertools.product(*[self.axis_nodes(k, False) for k in range(self.dim)])))

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*[self.axis_nodes(k) for k in range(self.dim)])))

    @property
    def elements(self) -> np.ndarray:
        """Cell connectivity as indices into :attr:`vertices` (2^d corners per cell)."""
        shape = tuple(c + 1 for c in self.cells)
        cells = []
        for corner in itertools.product(*[range(c) for c in self.cells]):
            ids = [np.ravel_multi_index(tuple(np.add(corner, off)), shape) for off in itertools.product((0, 1), repeat=self.dim)]
            cells.append(ids)
        return np.array(cells, dtype=int)


class FEMLinear(Dictionary):
    """Nodal hats at the interior vertices; tensor-product (bilinear in 2D)."""

    family = "fem"
    smoothness = "C0-piecewise-linear"

    def __init__(self, mesh: MeshSpec):
        self.mesh = mesh
        self.dim = mesh.dim
        self.size = mesh.n_interior
        self.lower, self.upper = mesh.lower, mesh.upper
        self._nodes = [mesh.axis_nodes(k) for k in range(self.dim)]
        self._h = mesh.spacing

    def _axis(self, X, k):
        # position in cell units, snapped to the grid so vertices and the
        # boundary give exact zeros and ones
        u = (X[:, k : k + 1] - self.lower[k]) / self._h[k]
        near = np.round(u)
        u = np.where(np.abs(u - near) < 1e-9, near, u)
        r = u - np.arange(1, len(self._nodes[k]) + 1)[None, :]
        inside = np.abs(r) < 1
        val = np.where(inside, 1 - np.abs(r), 0.0)
        der = np.where(inside, -np.sign(r) / self._h[k], 0.0)
        return val, der

    def _combine(self, factors):
        out = factors[0]
        for f in factors[1:]:
            out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
        return out

    def evaluate(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return self._combine([self._axis(X, k)[0] for k in range(self.dim)])

    def gradient(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        parts = [self._axis(X, k) for k in range(self.dim)]
        out = np.empty((X.shape[0], self.size, self.dim))
        for i in range(self.dim):
            out[:, :, i] = self._combine([parts[k][1] if k == i else parts[k][0] for k in range(self.dim)])
        return out

    def sup_bound(self) -> float:
        # at most 2^d hats overlap at any point, each bounded by one
        return float(2**self.dim)

    def quadrature_panels(self, lower, upper):
        return tuple(self.mesh.cells)

    def describe(self):
        return {"family": self.family, "N": self.size, "cells": list(self.mesh.cells)}


def monomials(d: int, k: int, lower=None, upper=None) -> Monomials:
    return Monomials(d, k, lower, upper)


def gaussians(centers, theta: float | None = None, lower=None, upper=None) -> Gaussians:
    """Gaussians at ``centers``; ``theta`` defaults to ``1/(2N)``."""
    centers = np.atleast_2d(np.asarray(centers, float))
    if centers.shape[0] == 1 and centers.shape[1] > 1 and lower is not None and len(lower) == 1:
        centers = centers.T
    if theta is None:
        theta = 1.0 / (2 * len(centers))
    return Gaussians(centers, theta, lower, upper)


def fem_linear(mesh: MeshSpec) -> FEMLinear:
    if mesh.dim not in (1, 2):
        raise ValueError("finite element hats are provided in one and two dimensions")
    return FEMLinear(mesh)


# --- operator application ---------------------------------------------------


def apply_operator_row(dictionary: Dictionary, sys: DynamicalSystem, op: OperatorSpec, X, rng=None) -> np.ndarray:
    """``(A psi_1(x), ..., A psi_N(x))`` for every row of ``X``; shape ``(M, N)``."""
    X = np.atleast_2d(np.asarray(X, float))
    if op.kind == "identity":
        return dictionary.evaluate(X)
    if op.kind == "koopman_t":
        return koopman_apply_mc(sys, dictionary.evaluate, X, op.t, op.h, op.n_realizations, rng)
    if sys.stochastic and not dictionary.has_hessian:
        raise SmoothnessMismatchError(
            f"{dictionary.family} has no pointwise second derivatives; "
            "build the structure matrix in weak form (ibp) instead"
        )
    grad = dictionary.gradient(X)
    b = sys.drift(X)
    if op.kind == "koopman_generator":
        out = np.einsum("md,mnd->mn", b, grad)
        if sys.stochastic:
            out += 0.5 * np.einsum("mij,mnji->mn", sys.covariance(X), dictionary.hessian(X))
        return out
    # pf_generator, pointwise adjoint with respect to Lebesgue measure
    psi = dictionary.evaluate(X)
    out = -sys.drift_divergence(X)[:, None] * psi - np.einsum("md,mnd->mn", b, grad)
    if sys.stochastic:
        out += 0.5 * sys.diffusion_divdiv(X)[:, None] * psi
        out += np.einsum("md,mnd->mn", sys.div_sigma(X), grad)
        out += 0.5 * np.einsum("mij,mnji->mn", sys.covariance(X), dictionary.hessian(X))
    return out


def operator_sup_bound(
    dictionary: Dictionary,
    sys: DynamicalSystem,
    op: OperatorSpec,
    *,
    seed: int = 0,
    n_random: int = 20000,
    n_starts: int = 8,
    safety: float = 2.0,
) -> float:
    """Bound ``gamma`` with ``|A Psi(x)|^2 <= gamma`` on the domain.

    Random search followed by bounded Nelder-Mead from the best starts; the
    maximum found is inflated by ``safety``.
    """
    if op.kind == "identity":
        return dictionary.sup_bound()
    if op.kind == "pf_generator":
        # the estimator samples Koopman generator values for this operator
        op = OperatorSpec("koopman_generator", ibp=op.ibp)
    if op.ibp is not None and sys.stochastic:
        raise SmoothnessMismatchError("no pointwise operator values in weak form")
    from .systems import SamplingMeasure, sample_points

    lo, hi = np.asarray(sys.lower), np.asarray(sys.upper)
    X = sample_points(SamplingMeasure.uniform(lo, hi), n_random, seed, "sup-bound")
    # corners and faces often carry the maximum of polynomial fields
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    X = np.vstack([X, corners])
    rng = np.random.default_rng(seed)

    def sq(Y):
        return np.sum(apply_operator_row(dictionary, sys, op, Y, rng) ** 2, axis=1)

    vals = sq(X)
    best = float(vals.max())
    if op.kind != "koopman_t":
        for x0 in X[np.argsort(vals)[-n_starts:]]:
            res = optimize.minimize(
                lambda y: -sq(y[None, :])[0],
                x0,
                method="Nelder-Mead",
                bounds=list(zip(lo, hi)),
                options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 400},
            )
            best = max(best, -float(res.fun))
    return safety * best


def gamma_n(dictionary: Dictionary, sys: DynamicalSystem, op: OperatorSpec, **kw) -> float:
    """Common bound for ``|Psi|^2`` and ``|A Psi|^2`` (both slots of the covariance)."""
    return max(dictionary.sup_bound(), operator_sup_bound(dictionary, sys, op, **kw))
