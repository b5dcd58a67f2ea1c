"""Experiment configuration: a YAML tree validated against a fixed schema.

Unknown keys anywhere in the tree raise :class:`ConfigError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from math import comb
from typing import Any

import numpy as np
import yaml

from ..dictionary import (
    Dictionary,
    MeshSpec,
    OperatorSpec,
    fem_linear,
    gaussians,
    grid_centers,
    monomials,
    quadrant_centers,
)
from ..noise import NoiseModel
from ..systems import DynamicalSystem, get_system

__all__ = [
    "ConfigError",
    "DictionarySpec",
    "ReferenceSpec",
    "BoundsSpec",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "build_dictionary",
    "desk_M_values",
    "full_M_values",
]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def desk_M_values() -> list[int]:
    return [2**k for k in range(8, 16)]


def full_M_values() -> list[int]:
    return [2**k for k in range(8, 20)]


@dataclass(frozen=True)
class DictionarySpec:
    """``family`` is ``monomials``, ``gaussians`` or ``fem``.

    Monomials use ``degree``; Gaussians use ``centers`` (``grid``, the default lattice, or
    ``quadrant``) and optional ``theta``; finite elements use ``interior``,
    the interior vertex count per axis. In a dictionary sweep ``N`` is taken
    from the sweep list instead.
    """

    family: str
    degree: int = 8
    centers: str = "grid"
    theta: float | None = None
    interior: tuple | None = None
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.family


@dataclass(frozen=True)
class ReferenceSpec:
    """How ``A_N`` is obtained: ``quadrature``, ``analytic`` or ``monte_carlo``."""

    method: str = "monte_carlo"
    M_ref: int = 2**17
    order: int = 8
    seed: int = 987654321


@dataclass(frozen=True)
class BoundsSpec:
    deltas: tuple = (0.01, 0.05, 0.1)
    epsilons: tuple = ()
    ps: tuple = (0.9,)
    noise_sigma: float = 1.0
    trials: int = 0
    max_coverage_M: int = 2**20
    p_dict: float = 0.95


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "ode"
    operator: OperatorSpec = field(default_factory=OperatorSpec)
    dictionaries: tuple = (DictionarySpec("monomials"),)
    M_values: tuple = tuple(desk_M_values())
    N_values: tuple = ()
    sigma_values: tuple = (0.0,)
    M: int = 10_000
    replicates: int = 20
    seed: int = 0
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    fem_sparse_noise: bool = True
    norm: str = "spectral"
    slope_range: tuple | None = None
    bounds: BoundsSpec = field(default_factory=BoundsSpec)
    eig_count: int = 4
    output: str | None = None
    threads: int = 1

    def get_system(self) -> DynamicalSystem:
        return get_system(self.system)

    def noise_model(self, sigma: float) -> NoiseModel:
        return NoiseModel("gaussian" if sigma > 0 else "none", float(sigma), self.fem_sparse_noise)

    def full_scale(self) -> "ExperimentConfig":
        return replace(
            self,
            M_values=tuple(full_M_values()),
            replicates=50,
            reference=replace(self.reference, M_ref=2**20),
        )


def _strict(cls, data: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = {f.name for f in fields(cls)}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
    return data


def _increasing(vals, name):
    vals = tuple(vals)
    if len(vals) == 0:
        raise ConfigError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{name} must be strictly increasing")
    return vals


def _operator(data) -> OperatorSpec:
    if isinstance(data, str):
        data = {"kind": data}
    _strict(OperatorSpec, data, "operator")
    try:
        return OperatorSpec(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"operator: {exc}") from None


def _dictionary(data, i) -> DictionarySpec:
    if isinstance(data, str):
        data = {"family": data}
    _strict(DictionarySpec, data, f"dictionaries[{i}]")
    data = dict(data)
    if data.get("family") not in ("monomials", "gaussians", "fem"):
        raise ConfigError(f"dictionaries[{i}]: family must be monomials, gaussians or fem")
    if data.get("centers", "grid") not in ("grid", "quadrant"):
        raise ConfigError(f"dictionaries[{i}]: centers must be 'grid' or 'quadrant'")
    if "interior" in data and data["interior"] is not None:
        data["interior"] = tuple(int(n) for n in np.atleast_1d(data["interior"]))
    return DictionarySpec(**data)


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Validate a parsed config tree and fill in defaults."""
    data = dict(_strict(ExperimentConfig, data or {}, "config"))
    kw: dict[str, Any] = {}
    for key in ("system", "norm", "output"):
        if key in data:
            kw[key] = data[key]
    if "system" in kw:
        try:
            get_system(kw["system"])
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    if kw.get("norm", "spectral") not in ("spectral", "frobenius"):
        raise ConfigError("norm must be spectral or frobenius")
    if "operator" in data:
        kw["operator"] = _operator(data["operator"])
    if "dictionaries" in data:
        dl = data["dictionaries"]
        if not isinstance(dl, list) or not dl:
            raise ConfigError("dictionaries must be a non-empty list")
        kw["dictionaries"] = tuple(_dictionary(d, i) for i, d in enumerate(dl))
    for key in ("M_values", "N_values", "sigma_values"):
        if key in data:
            kw[key] = _increasing(data[key], key)
    if any(m < 1 for m in kw.get("M_values", (1,))):
        raise ConfigError("M_values must be positive")
    if any(s < 0 for s in kw.get("sigma_values", (0,))):
        raise ConfigError("sigma_values must be non-negative")
    for key in ("M", "replicates", "seed", "eig_count", "threads"):
        if key in data:
            try:
                kw[key] = int(data[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be an integer") from None
    if kw.get("replicates", 1) < 1:
        raise ConfigError("replicates must be >= 1")
    if kw.get("threads", 1) < 1:
        raise ConfigError("threads must be >= 1")
    if "fem_sparse_noise" in data:
        kw["fem_sparse_noise"] = bool(data["fem_sparse_noise"])
    if "slope_range" in data and data["slope_range"] is not None:
        r = tuple(data["slope_range"])
        if len(r) != 2 or r[0] >= r[1]:
            raise ConfigError("slope_range must be [M_lo, M_hi] with M_lo < M_hi")
        kw["slope_range"] = r
    if "reference" in data:
        r = dict(_strict(ReferenceSpec, data["reference"], "reference"))
        if r.get("method", "monte_carlo") not in ("monte_carlo", "quadrature", "analytic"):
            raise ConfigError("reference.method must be monte_carlo, quadrature or analytic")
        kw["reference"] = ReferenceSpec(**r)
    if "bounds" in data:
        b = dict(_strict(BoundsSpec, data["bounds"], "bounds"))
        for key in ("deltas", "epsilons", "ps"):
            if key in b:
                b[key] = tuple(float(x) for x in b[key])
        kw["bounds"] = BoundsSpec(**b)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    return config_from_dict(data)


def _default_counts(d: int) -> tuple:
    return (9,) if d == 1 else (9, 5)


def build_dictionary(spec: DictionarySpec, sys: DynamicalSystem, N: int | None = None) -> Dictionary:
    """Instantiate a dictionary on the system's domain; ``N`` overrides the size."""
    lo, hi, d = sys.lower, sys.upper, sys.dim
    if spec.family == "monomials":
        k = spec.degree
        if N is not None:
            ks = [k for k in range(0, 64) if comb(k + d, k) == N]
            if not ks:
                raise ConfigError(f"no monomial degree gives N={N} in dimension {d}")
            k = ks[0]
        return monomials(d, k, lo, hi)
    if spec.family == "gaussians":
        if N is not None or spec.centers == "quadrant":
            if N is None:
                raise ConfigError("quadrant centres need N")
            try:
                P = quadrant_centers(lo, hi, N)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        else:
            counts = _default_counts(d)
            if d > 2:
                raise ConfigError("the default grid is defined in one and two dimensions")
            P = grid_centers(lo, hi, counts)
        return gaussians(P, spec.theta, lower=lo, upper=hi)
    if spec.family == "fem":
        if N is not None:
            n = round(N ** (1 / d))
            if n**d != N:
                raise ConfigError(f"FEM sweeps need N to be a perfect {d}-th power")
            interior = (n,) * d
        else:
            interior = spec.interior or _default_counts(d)
        if len(interior) != d:
            raise ConfigError("fem interior counts must match the dimension")
        return fem_linear(MeshSpec.for_interior(lo, hi, interior))
    raise ConfigError(f"unknown family {spec.family!r}")
