"""Additive measurement noise on dictionary and operator evaluations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bounds import BoundReport, OperatorConstants, oc_schedule, projection_error_certificate, BoundValidityError
from .estimator import GramPair, _block_sums, empirical_matrices, iter_evaluations

__all__ = [
    "NoiseModel",
    "Admissibility",
    "perturbed_matrices",
    "gaussian_admissibility",
    "noisy_projection_certificate",
]


@dataclass(frozen=True)
class NoiseModel:
    """``kind`` is ``"none"`` or ``"gaussian"`` (i.i.d. ``N(0, sigma^2)`` per evaluation).

    With ``fem_sparse`` (the default) finite element evaluations that are
    exactly zero stay zero, so only entries inside a hat's support are
    perturbed. Other families ignore the flag.
    """

    kind: str = "none"
    sigma: float = 0.0
    fem_sparse: bool = True

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def active(self) -> bool:
        return self.kind == "gaussian" and self.sigma > 0


def _perturb(a, sigma, rng, sparse):
    noise = sigma * rng.standard_normal(a.shape)
    if sparse:
        noise[a == 0] = 0.0
    return a + noise


def perturbed_matrices(
    dictionary,
    sys,
    op,
    points,
    model: NoiseModel,
    rng: np.random.Generator | None = None,
    *,
    dynamics_rng: np.random.Generator | None = None,
) -> GramPair:
    """Gram and structure matrices from perturbed evaluations.

    Each sample gets one draw per dictionary slot and one per operator slot.
    In weak form the operator slot is the gradient, so the gradient entries
    receive the second draw. Without active noise this is exactly
    :func:`~koopmc.estimator.empirical_matrices`.
    """
    if not model.active:
        return empirical_matrices(dictionary, sys, op, points, dynamics_rng)
    if rng is None:
        raise ValueError("noisy evaluations need an rng")
    X = np.atleast_2d(np.asarray(points, float))
    sparse = model.fem_sparse and dictionary.family == "fem"
    G = C = None
    for _, ev in iter_evaluations(dictionary, sys, op, X, dynamics_rng):
        ev.psi = _perturb(ev.psi, model.sigma, rng, sparse)
        if ev.weak:
            ev.grad = _perturb(ev.grad, model.sigma, rng, sparse)
        elif op.kind == "identity":
            ev.apsi = ev.psi
        else:
            ev.apsi = _perturb(ev.apsi, model.sigma, rng, sparse)
        g, c, _ = _block_sums(ev)
        if G is None:
            G, C = g, c
        else:
            G += g
            C += c
    M = X.shape[0]
    G /= M
    C /= M
    return GramPair(0.5 * (G + G.T), C, M, op.kind, op.ibp if sys.stochastic else None)


@dataclass(frozen=True)
class Admissibility:
    """Truncation level and admissibility probabilities for Gaussian noise.

    ``p_bound`` is the chi-square Chernoff bound ``1 - (x e^{1-x})^{N/2}``,
    ``x = gamma_N / N``, on one slot (``x = 2`` gives ``1 - (2/e)^{N/2}``).
    ``p_exact`` is ``P[|(eta, xi)|^2 <= gamma_tilde]`` for the joint
    ``2N``-vector and ``p_slot`` the same for one ``N``-vector.
    """

    gamma_tilde: float
    p_bound: float
    p_exact: float
    p_slot: float


def gaussian_admissibility(N: int, sigma: float, gamma_N: float | None = None) -> Admissibility:
    """``gamma_tilde = sigma^2 gamma_N`` and the matching probabilities; ``gamma_N`` defaults to ``2N``."""
    if N < 1 or sigma < 0:
        raise ValueError("need N >= 1 and sigma >= 0")
    gamma_N = 2.0 * N if gamma_N is None else float(gamma_N)
    if sigma == 0:
        return Admissibility(0.0, 1.0, 1.0, 1.0)
    x = gamma_N / N
    bound = 1.0 - (x * math.exp(1 - x)) ** (N / 2) if x > 1 else 0.0
    return Admissibility(
        sigma**2 * gamma_N,
        bound,
        float(stats.chi2.cdf(gamma_N, 2 * N)),
        float(stats.chi2.cdf(gamma_N, N)),
    )


def noisy_projection_certificate(
    consts: OperatorConstants, delta, p, p_tilde, gamma_tilde, *, epsilon=None
) -> BoundReport:
    """Noisy-data certificate; ``epsilon`` switches to the accuracy-targeted schedule.

    Requires ``p < p_tilde``. With ``gamma_tilde = 0`` and ``p_tilde = 1`` the
    noiseless certificate is returned unchanged.
    """
    if not p < p_tilde <= 1:
        raise BoundValidityError(f"need p < p_tilde <= 1, got p={p}, p_tilde={p_tilde}")
    if epsilon is not None:
        return oc_schedule(consts, epsilon, p, gamma_noise=gamma_tilde, p_noise=p_tilde)
    return projection_error_certificate(consts, delta, p, gamma_noise=gamma_tilde, p_noise=p_tilde)
