"""Benchmark dynamical systems, trajectory integration and the exact generator.

All field functions are vectorised: they take an array of points of shape
``(M, d)`` and return ``(M, d)`` for drifts and ``(M, d, r)`` for diffusions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._rng import blocked_uniform

__all__ = [
    "DynamicalSystem",
    "ObservableProbe",
    "SamplingMeasure",
    "MissingHessianError",
    "NonFiniteStateError",
    "builtin_ode",
    "builtin_double_well",
    "builtin_ou",
    "get_system",
    "apply_generator",
    "apply_pf_generator",
    "evolve",
    "koopman_apply_mc",
    "sample_points",
]


class MissingHessianError(ValueError):
    """A second-order generator was requested without Hessian information."""


class NonFiniteStateError(FloatingPointError):
    """A trajectory left the floating point range."""


def _points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        # a bare scalar is one point of a one-dimensional system
        return x.reshape(1, 1), True
    single = x.ndim == 1
    return np.atleast_2d(x), single


@dataclass(frozen=True)
class DynamicalSystem:
    """An SDE ``dX = b(X) dt + sigma(X) dW`` on an axis-aligned box.

    Parameters
    ----------
    name : str
        Identifier used by the harness.
    dim : int
        State dimension ``d``.
    drift : callable
        ``(M, d) -> (M, d)``.
    lower, upper : tuple of float
        Box bounds of the domain, one entry per axis.
    diffusion : callable, optional
        ``(M, d) -> (M, d, r)``; ``None`` for an ODE.
    drift_divergence, diffusion_divergence, diffusion_divdiv : callable, optional
        ``div b``, the vector ``(div Sigma)_l = sum_k d_k Sigma_kl`` and the
        scalar ``sum_kl d_k d_l Sigma_kl``. Needed for the pointwise
        Perron-Frobenius generator and the divergence form of the
        integration-by-parts structure matrix.
    """

    name: str
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    lower: tuple
    upper: tuple
    diffusion: Optional[Callable[[np.ndarray], np.ndarray]] = None
    drift_divergence: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_divergence: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_divdiv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metadata: dict = field(default_factory=dict)

    @property
    def stochastic(self) -> bool:
        return self.diffusion is not None

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower, float), np.asarray(self.upper, float)

    def b(self, x) -> np.ndarray:
        X, single = _points(x)
        out = self.drift(X)
        return out[0] if single else out

    def sigma(self, x) -> np.ndarray:
        X, single = _points(x)
        if self.diffusion is None:
            out = np.zeros((X.shape[0], self.dim, self.dim))
        else:
            out = self.diffusion(X)
        return out[0] if single else out

    def covariance(self, x) -> np.ndarray:
        """``Sigma(x) = sigma sigma^T``, shape ``(M, d, d)``."""
        s = self.sigma(x)
        return s @ np.swapaxes(s, -1, -2)

    def div_sigma(self, X: np.ndarray) -> np.ndarray:
        if self.diffusion is None:
            return np.zeros_like(X)
        if self.diffusion_divergence is None:
            raise NotImplementedError(f"{self.name}: divergence of Sigma not provided")
        return self.diffusion_divergence(X)


def _ode_system(gamma=-0.8, delta=-0.7) -> DynamicalSystem:
    def drift(X):
        return np.stack([gamma * X[:, 0], delta * (X[:, 1] - X[:, 0] ** 2)], axis=1)

    return DynamicalSystem(
        name="ode",
        dim=2,
        drift=drift,
        lower=(-2.0, -1.0),
        upper=(2.0, 1.0),
        drift_divergence=lambda X: np.full(X.shape[0], gamma + delta),
        metadata={"gamma": gamma, "delta": delta},
    )


def builtin_ode() -> DynamicalSystem:
    """Planar ODE ``b(x) = [g x1, d (x2 - x1^2)]`` with g = -0.8, d = -0.7."""
    return _ode_system()


def builtin_double_well() -> DynamicalSystem:
    """Overdamped Langevin dynamics in ``V = (x1^2 - 1)^2 + x2^2``.

    Anisotropic, state dependent noise ``sigma = [[0.7, x1], [0, 0.5]]``.
    """

    def drift(X):
        return np.stack([4 * X[:, 0] - 4 * X[:, 0] ** 3, -2 * X[:, 1]], axis=1)

    def diffusion(X):
        s = np.zeros((X.shape[0], 2, 2))
        s[:, 0, 0] = 0.7
        s[:, 0, 1] = X[:, 0]
        s[:, 1, 1] = 0.5
        return s

    def div_sigma(X):
        # Sigma = [[0.49 + x1^2, 0.5 x1], [0.5 x1, 0.25]]
        return np.stack([2 * X[:, 0], np.full(X.shape[0], 0.5)], axis=1)

    return DynamicalSystem(
        name="double_well",
        dim=2,
        drift=drift,
        lower=(-2.0, -1.0),
        upper=(2.0, 1.0),
        diffusion=diffusion,
        drift_divergence=lambda X: 2.0 - 12 * X[:, 0] ** 2,
        diffusion_divergence=div_sigma,
        diffusion_divdiv=lambda X: np.full(X.shape[0], 2.0),
    )


def builtin_ou() -> DynamicalSystem:
    """Ornstein-Uhlenbeck process ``dX = -X dt + sqrt(1/2) dW`` on [-2, 2]."""
    s = np.sqrt(0.5)
    return DynamicalSystem(
        name="ou",
        dim=1,
        drift=lambda X: -X,
        lower=(-2.0,),
        upper=(2.0,),
        diffusion=lambda X: np.full((X.shape[0], 1, 1), s),
        drift_divergence=lambda X: np.full(X.shape[0], -1.0),
        diffusion_divergence=lambda X: np.zeros_like(X),
        diffusion_divdiv=lambda X: np.zeros(X.shape[0]),
        metadata={"invariant_mean": 0.0, "invariant_variance": 0.25},
    )


_BUILTINS = {"ode": builtin_ode, "double_well": builtin_double_well, "ou": builtin_ou}


def get_system(name: str) -> DynamicalSystem:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(_BUILTINS)}") from None


@dataclass(frozen=True)
class ObservableProbe:
    """An observable with its derivatives, all vectorised over points.

    ``value: (M, d) -> (M,)``, ``gradient: (M, d) -> (M, d)``,
    ``hessian: (M, d) -> (M, d, d)`` (optional).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None


def apply_generator(sys: DynamicalSystem, probe: ObservableProbe, x) -> np.ndarray:
    """Koopman generator ``b . grad f + 1/2 Tr(Sigma hess f)`` at ``x``."""
    X, single = _points(x)
    out = np.einsum("md,md->m", sys.drift(X), probe.gradient(X))
    if sys.stochastic:
        if probe.hessian is None:
            raise MissingHessianError(f"{sys.name} has diffusion; the probe needs a Hessian")
        out = out + 0.5 * np.einsum("mij,mji->m", sys.covariance(X), probe.hessian(X))
    return out[0] if single else out


def apply_pf_generator(sys: DynamicalSystem, probe: ObservableProbe, x) -> np.ndarray:
    """Formal adjoint ``-div(b f) + 1/2 sum_kl d_k d_l (Sigma_kl f)`` w.r.t. Lebesgue measure."""
    X, single = _points(x)
    if sys.drift_divergence is None:
        raise NotImplementedError(f"{sys.name}: drift divergence not provided")
    f = probe.value(X)
    g = probe.gradient(X)
    out = -sys.drift_divergence(X) * f - np.einsum("md,md->m", sys.drift(X), g)
    if sys.stochastic:
        if probe.hessian is None:
            raise MissingHessianError(f"{sys.name} has diffusion; the probe needs a Hessian")
        out = out + 0.5 * sys.diffusion_divdiv(X) * f
        out = out + np.einsum("md,md->m", sys.div_sigma(X), g)
        out = out + 0.5 * np.einsum("mij,mji->m", sys.covariance(X), probe.hessian(X))
    return out[0] if single else out


def _n_steps(t: float, h: float) -> int:
    if h <= 0 or t < 0:
        raise ValueError("need h > 0 and t >= 0")
    n = int(round(t / h))
    if abs(n * h - t) > 1e-9 * max(t, h):
        raise ValueError(f"t={t} is not an integer multiple of h={h}")
    return n


def evolve(sys: DynamicalSystem, x0, t: float, h: float, rng: np.random.Generator | None = None):
    """Euler-Maruyama endpoint after time ``t`` with fixed step ``h``.

    Trajectories are not clipped to the domain. One Wiener increment per step
    and per point is drawn from ``rng`` (ignored for deterministic systems).
    """
    X, single = _points(x0)
    X = X.copy()
    steps = _n_steps(t, h)
    if sys.stochastic and rng is None and steps:
        raise ValueError("stochastic evolution needs an rng")
    sqh = np.sqrt(h)
    for _ in range(steps):
        inc = h * sys.drift(X)
        if sys.stochastic:
            s = sys.diffusion(X)
            dW = rng.standard_normal((X.shape[0], s.shape[2])) * sqh
            inc = inc + np.einsum("mij,mj->mi", s, dW)
        X += inc
        if not np.all(np.isfinite(X)):
            raise NonFiniteStateError(f"{sys.name}: non-finite state during integration")
    return X[0] if single else X


def koopman_apply_mc(sys, f, x, t, h, n_realizations, rng=None):
    """Monte Carlo ``E[f(Phi^t(x))]`` over ``n_realizations`` paths per point.

    ``f`` maps ``(M, d)`` points to ``(M,)`` or ``(M, N)`` values.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    X, single = _points(x)
    M = X.shape[0]
    reps = 1 if not sys.stochastic else n_realizations
    Y = evolve(sys, np.repeat(X, reps, axis=0), t, h, rng)
    vals = np.asarray(f(Y))
    vals = vals.reshape((M, reps) + vals.shape[1:]).mean(axis=1)
    return vals[0] if single else vals


@dataclass(frozen=True)
class SamplingMeasure:
    """The sampling measure. ``kind`` is ``"uniform"`` or ``"custom"``.

    A custom measure supplies ``sampler(rng, n) -> (n, d)``; it receives a
    dedicated stream per block so draws stay reproducible.
    """

    kind: str
    lower: tuple
    upper: tuple
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None

    @classmethod
    def uniform(cls, lower, upper) -> "SamplingMeasure":
        return cls("uniform", tuple(np.atleast_1d(lower).astype(float)), tuple(np.atleast_1d(upper).astype(float)))

    @classmethod
    def on(cls, sys: DynamicalSystem) -> "SamplingMeasure":
        return cls.uniform(sys.lower, sys.upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))


def sample_points(measure: SamplingMeasure, M: int, seed: int, *key) -> np.ndarray:
    """``M`` i.i.d. draws from ``measure``; bit-identical for identical ``(seed, key, M)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    lo, hi = np.asarray(measure.lower), np.asarray(measure.upper)
    if measure.kind == "uniform":
        return lo + (hi - lo) * blocked_uniform(seed, M, measure.dim, "points", *key)
    if measure.kind == "custom":
        from ._rng import BLOCK, stream

        out = np.empty((M, measure.dim))
        for b, start in enumerate(range(0, M, BLOCK)):
            stop = min(start + BLOCK, M)
            out[start:stop] = measure.sampler(stream(seed, "points", *key, b), BLOCK)[: stop - start]
        return out
    raise ValueError(f"unknown measure kind {measure.kind!r}")
