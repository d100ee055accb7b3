"""Command line entry point: ``dgheat <subcommand> [--config cfg.json] ...``.

Exit status is 0 when every configured window holds, 1 when one fails and 2
on configuration or input errors.  The BLAS thread count comes from
``DGHEAT_THREADS`` (default 1, which keeps reductions bit-reproducible).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import study
from .dg import PartitionError, build_partition, solve_heat, validate_partition
from .measure import MeasureError
from .mesh import MeshError
from .spectral import TruncationError

THREADS_ENV = "DGHEAT_THREADS"


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise study.ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if n < 1:
        raise study.ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _load(args) -> study.StudyConfig:
    cfg = study.StudyConfig.from_json(args.config) if args.config else study.StudyConfig()
    changes = {}
    if getattr(args, "csv", None):
        changes["output_csv"] = args.csv
    if getattr(args, "json", None):
        changes["output_json"] = args.json
    return cfg.replace(**changes) if changes else cfg


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2, sort_keys=True))


def _report(rep: study.RateReport, cfg: study.StudyConfig) -> int:
    rep.write(cfg)
    _emit(rep.summary())
    return 0 if rep.passed else 1


def cmd_solve(args) -> int:
    cfg = _load(args)
    space = cfg.space(cfg.h_levels[-1])
    v0 = cfg.initial_fe(space) if "random_fe" in cfg.initial_data else cfg.measure()
    sol = solve_heat(space, cfg.partition(cfg.M), cfg.r, v0)
    probes = [tuple(map(float, p.split(","))) for p in args.probe]
    if args.trace:
        sol.write_trace_csv(args.trace, probes)
    if args.final:
        sol.final.write(args.final)
    _emit({"n_interior": space.n_interior, "M": cfg.M, "r": cfg.r, "s": cfg.s, "T": cfg.T,
           "l2_final": float(sol.final.coefficients @ (space.mass @ sol.final.coefficients)) ** 0.5})
    return 0


def cmd_space(args) -> int:
    cfg = _load(args)
    return _report(study.run_space_study(cfg), cfg)


def cmd_time(args) -> int:
    cfg = _load(args)
    return _report(study.run_time_study(cfg), cfg)


def cmd_smoothing(args) -> int:
    cfg = _load(args)
    return _report(study.run_smoothing_study(cfg), cfg)


def cmd_log_factor(args) -> int:
    cfg = _load(args)
    return _report(study.run_log_factor_study(cfg), cfg)


def cmd_ritz(args) -> int:
    cfg = _load(args)
    return _report(study.run_ritz_study(cfg), cfg)


def cmd_split(args) -> int:
    cfg = _load(args)
    rep, h, k = study.error_splitting_report(cfg)
    if cfg.output_csv:
        rep.write_csv(cfg.output_csv, cfg, h, k)
    summary = rep.summary()
    if cfg.output_json:
        with open(cfg.output_json, "w") as fh:
            fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _emit(summary)
    return 0 if summary["pass"] else 1


def cmd_validate(args) -> int:
    p = build_partition(args.T, args.M, args.grading, args.exponent)
    rep = validate_partition(p, args.r)
    print(rep)
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgheat", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log study progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def study_parser(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON study configuration")
        p.add_argument("--csv", help="override output_csv")
        p.add_argument("--json", help="override output_json")
        p.set_defaults(func=func)
        return p

    p = study_parser("solve", cmd_solve, "solve once on the finest configured mesh with M steps")
    p.add_argument("--trace", help="per-node CSV of norms and probe values")
    p.add_argument("--final", help="write final coefficients as text")
    p.add_argument("--probe", action="append", default=[], metavar="X,Y", help="probe point (repeatable)")
    study_parser("convergence-space", cmd_space, "interior L-infinity error over h_levels")
    study_parser("convergence-time", cmd_time, "error at T over M_levels")
    study_parser("smoothing", cmd_smoothing, "decay exponents over T_levels")
    study_parser("log-factor", cmd_log_factor, "maximal regularity ratio over M_levels")
    study_parser("split-error", cmd_split, "three-term error splitting at T")
    study_parser("ritz-negnorm", cmd_ritz, "H^-1 error of the Ritz projection over h_levels")

    p = sub.add_parser("validate-partition", help="check the time-mesh conditions")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--grading", choices=("uniform", "graded"), default="uniform")
    p.add_argument("--exponent", type=float, default=1.0)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (study.ConfigError, PartitionError, MeshError, MeasureError, TruncationError,
            FileNotFoundError, json.JSONDecodeError, TypeError) as exc:
        print(f"dgheat: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
