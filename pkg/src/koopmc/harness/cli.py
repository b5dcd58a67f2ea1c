"""Command line entry point: ``koopmc <subcommand> --config run.yaml``.

Exit codes: 0 success, 1 configuration error, 2 runtime evaluation failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from ..estimator import empirical_matrices, export_csv, solve_estimator
from ..systems import SamplingMeasure, sample_points
from .._rng import stream
from .config import ConfigError, build_dictionary, load_config
from .sweeps import (
    fit_slope,
    operator_for,
    run_bound_report,
    run_data_sweep,
    run_dictionary_sweep,
    run_eigen_tracking,
    run_noise_sweep,
    write_records,
    write_report,
)
from ..spectral import write_trajectories

SUBCOMMANDS = ("sweep-data", "sweep-dict", "sweep-noise", "bounds", "eigs", "estimate")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="koopmc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--paper-scale", action="store_true", help="M up to 2^19, R = 50, M_ref = 2^20")
        p.add_argument("--out", default=None, help="output CSV path (or prefix for 'estimate')")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
    return ap


def _summary_path(out: str) -> str:
    root, ext = os.path.splitext(out)
    return f"{root}_summary{ext or '.csv'}"


def _print_slopes(cfg, res):
    for spec in cfg.dictionaries:
        for sigma in sorted({r.sigma for r in res.summary.rows}):
            try:
                s, se = fit_slope(res.summary, cfg.slope_range, dictionary=spec.name, sigma=sigma)
                print(f"{spec.name} sigma={sigma:g}: slope {s:+.3f} +/- {se:.3f}")
            except ValueError:
                pass


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.paper_scale:
        cfg = cfg.full_scale()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    out = args.out or cfg.output or f"{args.command}.csv"

    if args.command in ("sweep-data", "sweep-noise", "sweep-dict"):
        run = {"sweep-data": run_data_sweep, "sweep-noise": run_noise_sweep, "sweep-dict": run_dictionary_sweep}
        res = run[args.command](cfg)
        write_records(res.records, out)
        res.summary.write(_summary_path(out))
        if args.command != "sweep-dict":
            _print_slopes(cfg, res)
        failed = sum(r.failed for r in res.records)
        print(f"wrote {len(res.records)} records to {out} ({failed} failed cells)")
        return 0
    if args.command == "bounds":
        rows = run_bound_report(cfg)
        write_report(rows, out)
        print(f"wrote {len(rows)} bound rows to {out}")
        return 0
    if args.command == "eigs":
        tr = run_eigen_tracking(cfg)
        write_trajectories(tr, out, steps=cfg.M_values)
        print(f"wrote eigenvalue trajectories to {out}")
        return 0
    # estimate: one-shot matrix dump at the first grid point
    sys_ = cfg.get_system()
    D = build_dictionary(cfg.dictionaries[0], sys_)
    op = operator_for(cfg, D)
    M = cfg.M_values[0]
    X = sample_points(SamplingMeasure.on(sys_), M, cfg.seed, "cell", M, 0)
    est = solve_estimator(empirical_matrices(D, sys_, op, X, stream(cfg.seed, "dynamics", M, 0)))
    root = os.path.splitext(out)[0]
    for name, mat in (("G", est.gram.G), ("C", est.gram.C), ("A", est.A)):
        export_csv(mat, f"{root}_{name}.csv")
    print(f"N={D.size} M={M} rank={est.rank} truncated={est.trunc_count}; matrices at {root}_[GCA].csv")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError, OSError) as exc:
        print(f"evaluation failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
