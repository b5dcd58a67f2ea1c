"""Matrix Bernstein tails, sample-size calculators and a-priori certificates.

All sample sizes are the smallest integer strictly above the closed-form
threshold. Constants are meant to come from reference matrices, not from
the run being certified.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ._rng import stream
from .estimator import (
    ReferenceMatrices,
    empirical_matrices,
    galerkin_matrix,
    operator_norm,
    solve_estimator,
)
from .systems import SamplingMeasure, sample_points

__all__ = [
    "BoundValidityError",
    "OperatorConstants",
    "BoundReport",
    "bernstein_covariance_tail",
    "sample_threshold",
    "required_M_gram",
    "required_M_structure",
    "projection_error_certificate",
    "oc_schedule",
    "oc_radius_at",
    "residual_T_estimator",
    "CoverageProblem",
    "CoverageResult",
    "verify_coverage",
]

RESULT_KINDS = ("lemma-G", "lemma-C", "prop-projection", "thm-OC", "prop-noise", "thm-OC-noise")


class BoundValidityError(ValueError):
    """Parameters outside the range where a bound is proved."""


@dataclass(frozen=True)
class OperatorConstants:
    """Spectral norms entering the certificates."""

    N: int
    norm_G: float
    norm_Ginv: float
    norm_C: float
    norm_T: float
    gamma: float

    @classmethod
    def from_reference(cls, ref: ReferenceMatrices, gamma: float) -> "OperatorConstants":
        if ref.T is None:
            raise ValueError("reference matrices lack T; certificates need pointwise operator values")
        lam = np.linalg.eigvalsh(ref.G)
        if lam[0] <= 0:
            raise np.linalg.LinAlgError("reference Gram matrix is not positive definite")
        return cls(
            N=ref.N,
            norm_G=float(lam[-1]),
            norm_Ginv=float(1.0 / lam[0]),
            norm_C=float(np.linalg.norm(ref.C, 2)),
            norm_T=float(np.linalg.norm(ref.T, 2)),
            gamma=float(gamma),
        )

    @property
    def kappa(self) -> float:
        return self.norm_G * self.norm_Ginv

    @property
    def rho(self) -> float:
        return math.sqrt(self.kappa) * (1.0 + self.norm_C * self.norm_Ginv)

    @property
    def delta_max(self) -> float:
        """Upper end of the admissible ``delta`` range, ``1 / (2 ||G^{-1}||)``."""
        return 0.5 / self.norm_Ginv

    @property
    def norm_max(self) -> float:
        return max(self.norm_G, self.norm_T)


@dataclass(frozen=True)
class BoundReport:
    result: str
    N: int
    p: float
    required_M: int | None
    radius: float | None
    delta: float | None = None
    epsilon: float | None = None
    valid: bool = True
    note: str = ""

    COLUMNS = ("result", "N", "delta", "epsilon", "p", "required_M", "radius", "valid", "note")

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.COLUMNS}


def _check_p(p):
    if not 0 < p < 1:
        raise BoundValidityError(f"confidence p={p} must lie in (0, 1)")


def _check_delta(delta, norm_Ginv=None):
    if not delta > 0:
        raise BoundValidityError("delta must be positive")
    if norm_Ginv is not None and not delta < 0.5 / norm_Ginv:
        raise BoundValidityError(
            f"delta={delta:g} violates delta < 1/(2||G^-1||) = {0.5 / norm_Ginv:.6g}"
        )


def bernstein_covariance_tail(M, N, delta, gamma, norm_G, norm_T) -> float:
    """``min(1, 2N exp(-M delta^2 / 2 / (gamma (max(||T||, ||G||) + 2 delta / 3))))``."""
    log_tail = math.log(2 * N) - M * delta**2 / 2 / (gamma * (max(norm_T, norm_G) + 2 * delta / 3))
    return 1.0 if log_tail >= 0 else math.exp(log_tail)


def sample_threshold(K: float, delta: float, gamma: float, log_term: float) -> float:
    """``(3K + 2 delta) * 2 gamma / (3 delta^2) * log_term``."""
    return (3 * K + 2 * delta) * 2 * gamma / (3 * delta**2) * log_term


def _strictly_above(x: float) -> int:
    if not math.isfinite(x):
        raise OverflowError("sample-size threshold is not finite")
    return math.floor(x) + 1


def required_M_gram(N, delta, p, gamma, norm_G, norm_Ginv=None) -> int:
    """Samples for ``P[G_hat invertible, ||G_hat^-1 - G^-1|| < 2 ||G^-1||^2 delta] >= p``.

    The admissible range ``delta < 1/(2 ||G^-1||)`` is enforced when
    ``norm_Ginv`` is given.
    """
    _check_p(p)
    _check_delta(delta, norm_Ginv)
    return _strictly_above(sample_threshold(norm_G, delta, gamma, math.log(2 * N / (1 - p))))


def required_M_structure(N, delta, p, gamma, norm_G, norm_T) -> int:
    """Samples for ``P[||C_hat - C|| < delta] >= p``."""
    _check_p(p)
    _check_delta(delta)
    return _strictly_above(sample_threshold(max(norm_G, norm_T), delta, gamma, math.log(2 * N / (1 - p))))


def _radius(c: OperatorConstants, delta: float) -> float:
    return 2 * c.rho * c.norm_Ginv * delta


def projection_error_certificate(consts: OperatorConstants, delta, p, *, gamma_noise=0.0, p_noise=1.0) -> BoundReport:
    """Sample size and radius for ``||A_hat - A_N|| <= radius`` with probability ``p``.

    With ``gamma_noise`` and ``p_noise`` the noisy-data version is returned:
    ``gamma`` becomes ``gamma + gamma_noise`` and ``1 - p`` becomes
    ``1 - p / p_noise``.
    """
    _check_p(p)
    _check_delta(delta, consts.norm_Ginv)
    noisy = gamma_noise > 0 or p_noise < 1
    if noisy and not p < p_noise <= 1:
        raise BoundValidityError(f"need p < p_noise, got p={p}, p_noise={p_noise}")
    log_term = math.log(4 * consts.N / (1 - p / p_noise))
    F = sample_threshold(consts.norm_max, delta, consts.gamma + gamma_noise, log_term)
    return BoundReport(
        "prop-noise" if noisy else "prop-projection",
        consts.N,
        p,
        _strictly_above(F),
        _radius(consts, delta),
        delta=delta,
    )


def oc_schedule(consts: OperatorConstants, epsilon, p, *, gamma_noise=0.0, p_noise=1.0) -> BoundReport:
    """Sample size for ``P[||A_hat - A_N|| <= epsilon] >= p`` via ``delta_N = epsilon / (2 rho ||G^-1||)``."""
    _check_p(p)
    if not 0 < epsilon < consts.rho:
        raise BoundValidityError(f"epsilon={epsilon:g} must lie in (0, rho_N={consts.rho:.6g})")
    delta = epsilon / (2 * consts.rho * consts.norm_Ginv)
    rep = projection_error_certificate(consts, delta, p, gamma_noise=gamma_noise, p_noise=p_noise)
    kind = "thm-OC-noise" if rep.result == "prop-noise" else "thm-OC"
    return BoundReport(kind, consts.N, p, rep.required_M, epsilon, delta=delta, epsilon=epsilon)


def oc_radius_at(consts: OperatorConstants, M: int, p: float, *, rtol=1e-6, **noise) -> float:
    """Smallest ``epsilon`` whose :func:`oc_schedule` sample size does not exceed ``M``.

    Found by bisection on ``(0, rho_N)``; ``inf`` when even ``epsilon -> rho_N``
    needs more than ``M`` samples.
    """
    top = consts.rho * (1 - 1e-12)
    if oc_schedule(consts, top, p, **noise).required_M > M:
        return math.inf
    lo, hi = 0.0, top
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if oc_schedule(consts, mid, p, **noise).required_M <= M:
            hi = mid
        else:
            lo = mid
    return hi


def residual_T_estimator(dictionary, sys, op, points, rng=None) -> np.ndarray:
    """``T_hat = (1/M) sum_m A Psi(x_m) A Psi(x_m)^T``."""
    return empirical_matrices(dictionary, sys, op, points, rng, with_T=True).T


# --- empirical verification -------------------------------------------------


@dataclass(frozen=True)
class CoverageProblem:
    """Everything needed to draw one estimation: basis, dynamics, operator, reference."""

    dictionary: object
    sys: object
    op: object
    ref: ReferenceMatrices
    measure: SamplingMeasure | None = None


@dataclass(frozen=True)
class CoverageResult:
    frequency: float
    trials: int
    M: int
    threshold: float
    events: np.ndarray

    @property
    def passed(self) -> bool:
        return self.frequency >= self.threshold


def _trial_event(kind, problem, consts, delta, radius, M, seed, t):
    measure = problem.measure or SamplingMeasure.on(problem.sys)
    X = sample_points(measure, M, seed, "coverage", t)
    rng = stream(seed, "coverage-noise", t)
    gp = empirical_matrices(problem.dictionary, problem.sys, problem.op, X, rng)
    ref = problem.ref
    if kind == "lemma-G":
        lam = np.linalg.eigvalsh(gp.G)
        if lam[0] <= lam[-1] * gp.N * np.finfo(float).eps:
            return False
        diff = np.linalg.inv(gp.G) - np.linalg.inv(ref.G)
        return bool(np.linalg.norm(diff, 2) < 2 * consts.norm_Ginv**2 * delta)
    if kind == "lemma-C":
        return bool(np.linalg.norm(gp.C - ref.C, 2) < delta)
    A = solve_estimator(gp).A
    return bool(operator_norm(A - galerkin_matrix(ref), ref.G) <= radius)


def verify_coverage(
    kind: str,
    consts: OperatorConstants,
    delta: float,
    p: float,
    trials: int,
    seed: int,
    problem: CoverageProblem,
    *,
    M: int | None = None,
    threads: int = 1,
) -> CoverageResult:
    """Fraction of ``trials`` independent estimations in which the certified event holds.

    ``kind`` is ``lemma-G``, ``lemma-C``, ``prop-projection`` or ``thm-OC``
    (``delta`` then carries ``epsilon``). ``M`` defaults to the certified
    sample size. The contract is ``frequency >= p - 2 sqrt(p (1 - p) / trials)``.
    """
    if trials < 100:
        raise ValueError("coverage checks need at least 100 trials")
    if kind == "lemma-G":
        M_cert = required_M_gram(consts.N, delta, p, consts.gamma, consts.norm_G, consts.norm_Ginv)
        radius = None
    elif kind == "lemma-C":
        M_cert = required_M_structure(consts.N, delta, p, consts.gamma, consts.norm_G, consts.norm_T)
        radius = None
    elif kind == "prop-projection":
        rep = projection_error_certificate(consts, delta, p)
        M_cert, radius = rep.required_M, rep.radius
    elif kind == "thm-OC":
        rep = oc_schedule(consts, delta, p)
        M_cert, radius = rep.required_M, rep.radius
    else:
        raise ValueError(f"unknown result kind {kind!r}")
    M = M_cert if M is None else int(M)

    def one(t):
        return _trial_event(kind, problem, consts, delta, radius, M, seed, t)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            events = np.array(list(ex.map(one, range(trials))))
    else:
        events = np.array([one(t) for t in range(trials)])
    thr = p - 2 * math.sqrt(p * (1 - p) / trials)
    return CoverageResult(float(events.mean()), trials, M, thr, events)
