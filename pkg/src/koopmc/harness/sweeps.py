"""Seeded experiment sweeps over data size, dictionary size and noise level.

Every cell draws its points from a stream keyed by ``(seed, M, replicate)``,
so different dictionaries and noise levels see the same samples and the
output does not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .._rng import stream
from ..bounds import (
    BoundReport,
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
from ..dictionary import Dictionary, OperatorSpec, gamma_n
from ..estimator import (
    empirical_matrices,
    galerkin_matrix,
    matrix_error,
    matrix_norm,
    reference_matrices,
    solve_estimator,
)
from ..noise import gaussian_admissibility, noisy_projection_certificate, perturbed_matrices
from ..spectral import track_eigenvalues
from ..systems import SamplingMeasure, sample_points
from .config import ExperimentConfig, build_dictionary

__all__ = [
    "CSV_COLUMNS",
    "ExperimentRecord",
    "SummaryRow",
    "SweepSummary",
    "SweepResult",
    "operator_for",
    "reference_for",
    "run_data_sweep",
    "run_dictionary_sweep",
    "run_noise_sweep",
    "run_bound_report",
    "run_eigen_tracking",
    "fit_slope",
    "write_records",
]

CSV_COLUMNS = (
    "system",
    "operator",
    "dictionary",
    "N",
    "M",
    "sigma",
    "replicate",
    "abs_error",
    "norm_error",
    "gram_rank",
    "trunc_count",
    "wall_ms",
)


@dataclass(frozen=True)
class ExperimentRecord:
    system: str
    operator: str
    dictionary: str
    N: int
    M: int
    sigma: float
    replicate: int
    abs_error: float
    norm_error: float
    gram_rank: int
    trunc_count: int
    wall_ms: float
    failed: bool = False

    def row(self) -> list:
        d = asdict(self)
        return [d[c] for c in CSV_COLUMNS]


@dataclass(frozen=True)
class SummaryRow:
    dictionary: str
    N: int
    M: int
    sigma: float
    R: int
    mean_error: float
    ci_low: float
    ci_high: float
    log2_mean_error: float
    failures: int
    bound: float = math.nan


@dataclass
class SweepSummary:
    rows: list

    def select(self, dictionary=None, sigma=None, N=None) -> list:
        out = self.rows
        if dictionary is not None:
            out = [r for r in out if r.dictionary == dictionary]
        if sigma is not None:
            out = [r for r in out if r.sigma == sigma]
        if N is not None:
            out = [r for r in out if r.N == N]
        return out

    def write(self, path) -> None:
        cols = list(SummaryRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in cols])


@dataclass
class SweepResult:
    records: list
    summary: SweepSummary


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def operator_for(cfg: ExperimentConfig, dictionary: Dictionary) -> OperatorSpec:
    """The configured operator; the weak form is kept only for dictionaries without Hessians."""
    op = cfg.operator
    if op.ibp is not None and dictionary.has_hessian:
        op = replace(op, ibp=None)
    return op


def reference_for(cfg, dictionary, sys, op, *, M_ref=None, with_T=False):
    ref = cfg.reference
    return reference_matrices(
        dictionary,
        sys,
        op,
        SamplingMeasure.on(sys),
        ref.method,
        order=ref.order,
        M_ref=M_ref or ref.M_ref,
        seed=ref.seed,
        with_T=with_T,
    )


def _summarise(records, bounds=None) -> SweepSummary:
    groups: dict = {}
    for r in records:
        groups.setdefault((r.dictionary, r.N, r.M, r.sigma), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3])):
        recs = groups[key]
        e = np.array([r.norm_error for r in recs if not r.failed and np.isfinite(r.norm_error)])
        R = len(e)
        if R:
            mean = float(e.mean())
            half = 1.96 * float(e.std(ddof=1)) / math.sqrt(R) if R > 1 else 0.0
            lmean = float(np.mean(np.log2(np.maximum(e, 1e-300))))
        else:
            mean = half = lmean = math.nan
        b = bounds.get(key[:2], math.nan) if bounds else math.nan
        rows.append(SummaryRow(*key, R, mean, mean - half, mean + half, lmean, len(recs) - R, b))
    return SweepSummary(rows)


def fit_slope(summary, M_range=None, *, dictionary=None, sigma=None, N=None):
    """Least-squares slope of ``log2(mean error)`` against ``log2(M)``.

    ``summary`` is a :class:`SweepSummary` (filtered by ``dictionary``,
    ``sigma`` and ``N``) or a sequence of ``(M, mean_error)`` pairs. Returns
    ``(slope, stderr)``.
    """
    if isinstance(summary, SweepSummary):
        pts = [(r.M, r.mean_error) for r in summary.select(dictionary, sigma, N)]
    else:
        pts = [tuple(p) for p in summary]
    if M_range is not None:
        pts = [p for p in pts if M_range[0] <= p[0] <= M_range[1]]
    pts = [p for p in pts if np.isfinite(p[1]) and p[1] > 0]
    if len(pts) < 3:
        raise ValueError("slope fit needs at least three grid points")
    x = np.log2([p[0] for p in pts])
    y = np.log2([p[1] for p in pts])
    X = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = len(x) - 2
    resid = y - X @ coef
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    stderr = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    return float(coef[0]), stderr


def _cell(cfg, sys, spec, D, op, A_ref, M, r, sigma, sigma_index):
    t0 = time.perf_counter()
    X = sample_points(SamplingMeasure.on(sys), M, cfg.seed, "cell", M, r)
    dyn = stream(cfg.seed, "dynamics", M, r)
    try:
        if sigma > 0:
            noise_rng = stream(cfg.seed, "noise", sigma_index, M, r)
            gp = perturbed_matrices(D, sys, op, X, cfg.noise_model(sigma), noise_rng, dynamics_rng=dyn)
        else:
            gp = empirical_matrices(D, sys, op, X, dyn)
        est = solve_estimator(gp)
        abs_err, norm_err = matrix_error(est.A, A_ref, cfg.norm)
        failed = not np.isfinite(norm_err)
        rank, trunc = est.rank, est.trunc_count
    except (FloatingPointError, np.linalg.LinAlgError, ValueError):
        abs_err = norm_err = math.nan
        rank, trunc, failed = 0, D.size, True
    ms = 1e3 * (time.perf_counter() - t0)
    return ExperimentRecord(sys.name, op.kind, spec.name, D.size, M, float(sigma), r, abs_err, norm_err, rank, trunc, ms, failed)


def _run_cells(cfg, jobs):
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            out = list(ex.map(lambda j: _cell(*j), jobs))
    else:
        out = [_cell(*j) for j in jobs]
    return out


def _sort(records):
    order = {}
    return sorted(records, key=lambda r: (order.setdefault(r.dictionary, len(order)), r.N, r.sigma, r.M, r.replicate))


def _grid_sweep(cfg: ExperimentConfig, sigmas) -> SweepResult:
    sys = cfg.get_system()
    records = []
    for spec in cfg.dictionaries:
        D = build_dictionary(spec, sys)
        op = operator_for(cfg, D)
        A_ref = galerkin_matrix(reference_for(cfg, D, sys, op))
        jobs = [
            (cfg, sys, spec, D, op, A_ref, M, r, s, si)
            for si, s in enumerate(sigmas)
            for M in cfg.M_values
            for r in range(cfg.replicates)
        ]
        records += _run_cells(cfg, jobs)
    records = _sort(records)
    return SweepResult(records, _summarise(records))


def run_data_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Error against ``M`` for every configured dictionary (noiseless)."""
    return _grid_sweep(cfg, (0.0,))


def run_noise_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Data sweep repeated for each noise level in ``sigma_values``."""
    return _grid_sweep(cfg, cfg.sigma_values)


def _constants(D, sys, op, cfg, ref=None):
    if ref is None:
        ref = reference_matrices(D, sys, op, SamplingMeasure.on(sys), "quadrature", order=cfg.reference.order)
    return OperatorConstants.from_reference(ref, gamma_n(D, sys, op, seed=cfg.seed)), ref


def run_dictionary_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Error against ``N`` at fixed ``M`` with the capped accuracy-schedule bound.

    The bound column is ``min(1, epsilon(M) / ||A_N||)`` where ``epsilon(M)``
    inverts the sample-size threshold at confidence ``bounds.p_dict``.
    """
    if not cfg.N_values:
        from .config import ConfigError

        raise ConfigError("dictionary sweep needs N_values")
    sys = cfg.get_system()
    records, bounds = [], {}
    for spec in cfg.dictionaries:
        for N in cfg.N_values:
            D = build_dictionary(spec, sys, N)
            op = operator_for(cfg, D)
            A_ref = galerkin_matrix(reference_for(cfg, D, sys, op))
            try:
                consts, qref = _constants(D, sys, op, cfg)
                eps = oc_radius_at(consts, cfg.M, cfg.bounds.p_dict)
                bounds[(spec.name, D.size)] = min(1.0, eps / matrix_norm(galerkin_matrix(qref), cfg.norm))
            except (ValueError, np.linalg.LinAlgError, OverflowError):
                bounds[(spec.name, D.size)] = math.nan
            jobs = [(cfg, sys, spec, D, op, A_ref, cfg.M, r, 0.0, 0) for r in range(cfg.replicates)]
            records += _run_cells(cfg, jobs)
    records = _sort(records)
    return SweepResult(records, _summarise(records, bounds))


REPORT_COLUMNS = BoundReport.COLUMNS + ("dictionary", "coverage", "coverage_threshold")


def run_bound_report(cfg: ExperimentConfig) -> list[dict]:
    """Sample sizes for every ``(delta, p)`` and ``(epsilon, p)`` cell, with optional coverage.

    Each row is a :class:`BoundReport` row plus the dictionary name and, when
    ``bounds.trials > 0`` and the sample size is affordable, the empirical
    coverage frequency and its binomial threshold.
    """
    sys = cfg.get_system()
    b = cfg.bounds
    rows = []
    for spec in cfg.dictionaries:
        D = build_dictionary(spec, sys)
        op = operator_for(cfg, D)
        consts, ref = _constants(D, sys, op, cfg)
        adm = gaussian_admissibility(consts.N, b.noise_sigma, consts.gamma)
        problem = CoverageProblem(D, sys, op, ref)

        def emit(rep: BoundReport, kind=None, target=None):
            row = rep.row()
            row.update(dictionary=spec.name, coverage=math.nan, coverage_threshold=math.nan)
            if kind and b.trials and rep.valid and rep.required_M <= b.max_coverage_M:
                cov = verify_coverage(kind, consts, target, rep.p, b.trials, cfg.seed, problem, M=rep.required_M, threads=cfg.threads)
                row.update(coverage=cov.frequency, coverage_threshold=cov.threshold)
            rows.append(row)

        def invalid(kind, p, exc, delta=None, epsilon=None):
            rows.append(
                dict(BoundReport(kind, consts.N, p, None, None, delta, epsilon, False, str(exc)).row(),
                     dictionary=spec.name, coverage=math.nan, coverage_threshold=math.nan)
            )

        for p in b.ps:
            for delta in b.deltas:
                try:
                    M = required_M_gram(consts.N, delta, p, consts.gamma, consts.norm_G, consts.norm_Ginv)
                    emit(BoundReport("lemma-G", consts.N, p, M, 2 * consts.norm_Ginv**2 * delta, delta), "lemma-G", delta)
                except (BoundValidityError, OverflowError) as exc:
                    invalid("lemma-G", p, exc, delta=delta)
                try:
                    M = required_M_structure(consts.N, delta, p, consts.gamma, consts.norm_G, consts.norm_T)
                    emit(BoundReport("lemma-C", consts.N, p, M, delta, delta), "lemma-C", delta)
                except (BoundValidityError, OverflowError) as exc:
                    invalid("lemma-C", p, exc, delta=delta)
                try:
                    emit(projection_error_certificate(consts, delta, p), "prop-projection", delta)
                except (BoundValidityError, OverflowError) as exc:
                    invalid("prop-projection", p, exc, delta=delta)
                try:
                    emit(noisy_projection_certificate(consts, delta, p, adm.p_bound, adm.gamma_tilde))
                except (BoundValidityError, OverflowError) as exc:
                    invalid("prop-noise", p, exc, delta=delta)
            for eps in b.epsilons:
                try:
                    emit(oc_schedule(consts, eps, p), "thm-OC", eps)
                except (BoundValidityError, OverflowError) as exc:
                    invalid("thm-OC", p, exc, epsilon=eps)
                try:
                    emit(noisy_projection_certificate(consts, None, p, adm.p_bound, adm.gamma_tilde, epsilon=eps))
                except (BoundValidityError, OverflowError) as exc:
                    invalid("thm-OC-noise", p, exc, epsilon=eps)
    return rows


def run_eigen_tracking(cfg: ExperimentConfig, dictionary_index: int = 0, replicate: int = 0):
    """Leading eigenvalues of the estimate along the ``M`` grid; returns a ``Tracking``."""
    sys = cfg.get_system()
    spec = cfg.dictionaries[dictionary_index]
    D = build_dictionary(spec, sys)
    op = operator_for(cfg, D)
    ests = []
    for M in cfg.M_values:
        X = sample_points(SamplingMeasure.on(sys), M, cfg.seed, "cell", M, replicate)
        gp = empirical_matrices(D, sys, op, X, stream(cfg.seed, "dynamics", M, replicate))
        ests.append(solve_estimator(gp))
    return track_eigenvalues(ests, min(cfg.eig_count, D.size))


def write_records(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])


def write_report(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else _fmt(row[c]) for c in REPORT_COLUMNS])
