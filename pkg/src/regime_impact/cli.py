"""Command-line front end.

Exit codes: 0 success, 2 configuration / usage error, 3 solver or simulation
failure, 4 explicit-scheme stability (CFL) rejection, 5 a reproduction check
failed. Errors are reported as one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .experiments import FIGURES, CheckFailure, StageError, run_reference_suite
from .full_info import solve_full, value_full, write_full_csv
from .model import ModelError
from .partial_info import (CFL_LIMIT, CFLError, Grid2, UnsupportedModel, averaged_parameter_strategy, solve_partial,
                           value_partial, write_partial_csv)
from .simulator import FULL, PARTIAL, ConstantPolicy, estimate_value, simulate_path, write_path_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CFL = 4
EXIT_CHECK = 5


class UsageError(ValueError):
    pass


def _emit_error(code: int, kind: str, message: str, **extra) -> int:
    payload = {"error": kind, "exit_code": code, "message": message, **extra}
    print(json.dumps(payload, sort_keys=True, default=float), file=sys.stderr)
    return code


def _out_dir(args, cfg) -> Path:
    return Path(args.out) if args.out else Path(cfg.output.directory)


def _cmd_solve_full(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.solver
    impact = not args.no_impact
    value, strat = solve_full(cfg.model, impact, sc.full_steps, sc.full_controls, sc.tol)
    path = _out_dir(args, cfg) / f"full_info_{'impact' if impact else 'noimpact'}.csv"
    write_full_csv(path, value, strat, cfg.output.time_stride)
    m = cfg.model
    print(json.dumps({
        "output": str(path),
        "h_star_t0": strat.h_star[0].tolist(),
        "value_t0": [value_full(m, value, 0.0, m.w0, i) for i in range(m.K)],
        "diagnostics": value.diagnostics,
    }, sort_keys=True))
    return EXIT_OK


def _cmd_solve_partial(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.solver
    impact = not args.no_impact
    table = solve_partial(cfg.model, Grid2(sc.partial_n_t, sc.partial_n_pi, cfg.model.T), impact,
                          sc.partial_controls, sc.tol)
    path = _out_dir(args, cfg) / f"partial_info_{'impact' if impact else 'noimpact'}.csv"
    write_partial_csv(path, table, cfg.output.time_stride)
    m = cfg.model
    print(json.dumps({
        "output": str(path),
        "value_t0_pi0": value_partial(m, table, 0.0, m.w0, m.pi0),
        "diagnostics": table.diagnostics,
    }, sort_keys=True))
    return EXIT_OK


def _policy(args, cfg, model):
    """(policy, mode, solver value at t=0 from pi0 or None)."""
    sc = cfg.solver
    impact = not args.no_impact
    name = args.policy
    pi0 = np.asarray(model.pi0)
    if name == "full-opt":
        value, strat = solve_full(model, impact, sc.full_steps, sc.full_controls, sc.tol)
        target = sum(pi0[i] * value_full(model, value, 0.0, model.w0, i) for i in range(model.K))
        return strat, FULL, float(target)
    if name == "partial-opt":
        table = solve_partial(model, Grid2(sc.partial_n_t, sc.partial_n_pi, model.T), impact,
                              sc.partial_controls, sc.tol)
        return table.strategy(model.h_max), PARTIAL, value_partial(model, table, 0.0, model.w0, pi0)
    if name == "averaged":
        return averaged_parameter_strategy(model, sc.full_steps), PARTIAL, None
    if name.startswith("flat:"):
        try:
            h = float(name[5:])
        except ValueError:
            raise UsageError(f"cannot parse position in --policy {name!r}") from None
        if not abs(h) <= model.h_max:
            raise UsageError(f"flat position {h} outside the effective control set [-{model.h_max}, {model.h_max}]")
        return ConstantPolicy(h), FULL, None
    raise UsageError(f"unknown policy {name!r}; expected full-opt, partial-opt, averaged or flat:H")


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    n_paths = cfg.simulation.n_paths if args.paths is None else args.paths
    seed = cfg.simulation.seed if args.seed is None else args.seed
    if n_paths < 2:
        raise UsageError("--paths must be >= 2: the standard error is undefined for one path")
    if seed < 0:
        raise UsageError("--seed must be >= 0")
    model = cfg.model if not args.no_impact else cfg.model.without_impact()
    policy, mode, target = _policy(args, cfg, model)
    mean, se = estimate_value(model, policy, mode, n_paths, seed, threads=args.threads)
    if args.dump_path:
        write_path_csv(args.dump_path, simulate_path(model, policy, mode, seed, 0,
                                                     report_stride=cfg.simulation.report_stride))
    out = {"policy": args.policy, "mode": mode, "impact": not args.no_impact, "n_paths": n_paths,
           "seed": seed, "mean": mean, "se": se}
    if target is not None:
        out["solver_value"] = target
        out["z"] = (mean - target) / se if se > 0 else None
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    report = run_reference_suite(cfg, write=True, out_dir=out)
    print(json.dumps({"output": str(out), "files": list(FIGURES) + ["summary.json", "diagnostics.json"],
                      "checks": {c["name"]: c["passed"] for c in report.checks}}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regime-impact",
                                     description="Optimal investment with market impact on a hidden regime chain.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration (see config.schema.json)")
        p.add_argument("--out", help="output directory (default: output.directory from the config)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: REGIME_IMPACT_THREADS or all cores)")

    p = sub.add_parser("solve-full", help="full-information HJB tables")
    common(p)
    p.add_argument("--no-impact", action="store_true", help="freeze the generator at h = 0")
    p.set_defaults(func=_cmd_solve_full)

    p = sub.add_parser("solve-partial", help="partial-information PDE tables (K=2)")
    common(p)
    p.add_argument("--no-impact", action="store_true", help="freeze the generator at h = 0")
    p.set_defaults(func=_cmd_solve_partial)

    p = sub.add_parser("simulate", help="Monte Carlo estimate of expected utility under a policy")
    common(p)
    p.add_argument("--policy", required=True, help="full-opt | partial-opt | averaged | flat:H")
    p.add_argument("--paths", type=int, default=None, help="number of paths (>= 2)")
    p.add_argument("--seed", type=int, default=None, help="base seed (>= 0)")
    p.add_argument("--no-impact", action="store_true", help="simulate and solve without impact")
    p.add_argument("--dump-path", help="also write path 0 (events and reporting grid) to this CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reproduce", help="run the full numerical study and write figure data")
    common(p)
    p.set_defaults(func=_cmd_reproduce)
    return parser


def _classify(exc: BaseException, **extra) -> int:
    if isinstance(exc, StageError):
        return _classify(exc.cause, stage=exc.stage)
    if isinstance(exc, CFLError):
        return _emit_error(EXIT_CFL, "cfl", str(exc), cfl=exc.cfl, cfl_limit=CFL_LIMIT, min_n_t=exc.min_n_t, **extra)
    if isinstance(exc, (ConfigError, ModelError, UsageError, UnsupportedModel)):
        return _emit_error(EXIT_CONFIG, "config", str(exc), **extra)
    return _emit_error(EXIT_SOLVER, "solver", f"{type(exc).__name__}: {exc}", **extra)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    if args.threads is not None:
        if args.threads < 1:
            return _emit_error(EXIT_CONFIG, "config", "--threads must be >= 1")
        os.environ["REGIME_IMPACT_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except CheckFailure as exc:
        return _emit_error(EXIT_CHECK, "check", str(exc), failed=[c["name"] for c in exc.failed])
    except Exception as exc:  # the exit-code map is total
        return _classify(exc)


if __name__ == "__main__":
    sys.exit(main())
