"""End-to-end reproduction of the two-regime numerical study as CSV/JSON data.

Every check below guards one qualitative property of the optimal strategies and values. The report is
fail-closed: if any check fails, nothing is written and CheckFailure lists the
failing checks.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .full_info import solve_full, value_full
from .io import atomic_writer, fmt, strided, write_json
from .model import LogUtility
from .partial_info import (Grid2, averaged_parameter_strategy, check_cfl, evaluate_fixed_strategy,
                           solve_partial, to_value, value_partial, write_gains_csv)
from .simulator import FULL, PARTIAL, estimate_value

GAIN_SLACK = 1e-6
ORDER_SLACK = 1e-6
INFO_SLACK = 1e-2
CONVERGENCE_REL = 0.05
MC_SIGMAS = 3.0

FIGURES = ("fig1_strategy_full.csv", "fig2_value_full.csv", "fig3_strategy_partial.csv",
           "fig4_value_partial.csv", "fig5_gains.csv")


class StageError(RuntimeError):
    """A solver or simulation failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class CheckFailure(RuntimeError):
    def __init__(self, failed: list):
        names = ", ".join(c["name"] for c in failed)
        super().__init__(f"checks failed: {names}")
        self.failed = failed


@dataclass
class ExperimentReport:
    config: dict
    summary: dict
    diagnostics: dict
    checks: list
    tables: dict = field(default_factory=dict)  # raw solver outputs, keyed by stage

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _stage(name, timings, fn, *args, **kw):
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kw)
    except Exception as exc:  # re-raised with the stage named
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - t0
    return out


def _check(checks, name, passed, **detail):
    checks.append({"name": name, "passed": bool(passed), **{k: _plain(v) for k, v in detail.items()}})


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _full_values(params, table):
    """Utility value at (t, w0, e_i) over the whole time grid."""
    if isinstance(table.utility, LogUtility):
        return math.log(params.w0) + table.values
    th = table.utility.theta
    return params.w0**th / th * np.exp(th * table.values)


def run_reference_suite(cfg: Config, write: bool = True, out_dir=None) -> ExperimentReport:
    params = cfg.model
    sc = cfg.solver
    timings: dict = {}
    checks: list = []

    full_imp = _stage("solve_full[impact]", timings, solve_full, params, True, sc.full_steps, sc.full_controls, sc.tol)
    full_no = _stage("solve_full[no-impact]", timings, solve_full, params, False, sc.full_steps, sc.full_controls, sc.tol)
    grid = Grid2(sc.partial_n_t, sc.partial_n_pi, params.T)
    part_imp = _stage("solve_partial[impact]", timings, solve_partial, params, grid, True, sc.partial_controls, sc.tol)
    part_no = _stage("solve_partial[no-impact]", timings, solve_partial, params, grid, False, sc.partial_controls, sc.tol)
    bench = _stage("averaged_parameter_strategy", timings, averaged_parameter_strategy, params, sc.full_steps)
    bench_model = cfg.benchmark_eval_model()
    bench_val = _stage("evaluate_fixed_strategy[averaged]", timings, evaluate_fixed_strategy,
                       bench_model, grid, bench, True)

    (v_imp, s_imp), (v_no, s_no) = full_imp, full_no
    times = v_imp.times
    L = params.L
    K = params.K

    # strategies strictly inside (-L, L)
    hmax_seen = max(np.abs(s_imp.h_star).max(), np.abs(s_no.h_star).max(),
                    np.abs(part_imp.h_star).max(), np.abs(part_no.h_star).max())
    _check(checks, "strategies_inside_bounds", hmax_seen < L, max_abs_h=hmax_seen, L=L)

    # impact strategy meets the no-impact one at the last step before maturity
    last = -2 if times.size > 1 else -1
    gap = np.abs(s_imp.h_star[last] - s_no.h_star[last])
    level = np.abs(s_no.h_star[last])
    _check(checks, "impact_strategy_converges_at_maturity",
           np.all(gap <= CONVERGENCE_REL * level), gap=gap, no_impact_level=level, t=times[last])

    # short-selling in the good state far from maturity, long near it
    bull = s_imp.h_star[:, 0]
    _check(checks, "bull_short_early_long_late", bull[0] < 0 and bull[last] > 0,
           h_t0=bull[0], h_near_T=bull[last])

    if K == 2:
        bear_i, bear_n = s_imp.h_star[:, 1], s_no.h_star[:, 1]
        _check(checks, "bear_short_and_more_aggressive_with_impact",
               np.all(bear_i < 0) and np.all(bear_i <= bear_n + 1e-9),
               max_h_bear=bear_i.max(), max_excess=(bear_i - bear_n).max())

    fv_imp, fv_no = _full_values(params, v_imp), _full_values(params, v_no)
    _check(checks, "full_value_impact_ge_noimpact", np.all(fv_imp[0] - fv_no[0] >= -ORDER_SLACK),
           impact=fv_imp[0], no_impact=fv_no[0])
    _check(checks, "bear_value_gt_bull_value", fv_imp[0, -1] > fv_imp[0, 0] and fv_no[0, -1] > fv_no[0, 0],
           impact=fv_imp[0], no_impact=fv_no[0])

    pv_imp, pv_no = to_value(params, part_imp), to_value(params, part_no)
    _check(checks, "partial_value_impact_ge_noimpact", (pv_imp - pv_no).min() >= -ORDER_SLACK,
           min_margin=(pv_imp - pv_no).min())

    pv_bench = to_value(params, bench_val)
    gains = pv_imp - pv_bench
    k_min = np.unravel_index(np.argmin(gains), gains.shape)
    k_max = np.unravel_index(np.argmax(gains), gains.shape)
    _check(checks, "gains_from_filtering_nonnegative", gains.min() >= -GAIN_SLACK,
           min_gain=gains.min(), at_t=grid.times[k_min[0]], at_pi=grid.pis[k_min[1]])

    # partial information cannot beat the pi-mixture of full-information values
    pis = grid.pis
    worst = -math.inf
    for pv, fv in ((pv_imp, fv_imp), (pv_no, fv_no)):
        mix = pis * fv[0, 0] + (1 - pis) * fv[0, 1]
        worst = max(worst, (pv[0] - mix).max())
    _check(checks, "information_ordering", worst <= INFO_SLACK, max_excess=worst)

    mc = {}
    if cfg.experiment.monte_carlo:
        sim = cfg.simulation
        pi0 = np.asarray(params.pi0)
        runs = (
            ("full[impact]", s_imp, FULL, float(pi0 @ fv_imp[0])),
            ("full[no-impact]", s_no, FULL, float(pi0 @ fv_no[0])),
            ("partial[impact]", part_imp.strategy(params.h_max), PARTIAL,
             value_partial(params, part_imp, 0.0, params.w0, pi0)),
            ("partial[no-impact]", part_no.strategy(params.h_max), PARTIAL,
             value_partial(params, part_no, 0.0, params.w0, pi0)),
        )
        for k, (name, policy, mode, target) in enumerate(runs):
            # the no-impact policies are simulated in the no-impact market they were solved for
            model = params if "[impact]" in name else params.without_impact()
            mean, se = _stage(f"monte_carlo[{name}]", timings, estimate_value, model, policy, mode,
                              sim.n_paths, sim.seed + k)
            z = (mean - target) / se if se > 0 else (0.0 if mean == target else math.inf)
            mc[name] = {"mean": mean, "se": se, "solver_value": target, "z": z, "n_paths": sim.n_paths,
                        "seed": sim.seed + k}
            _check(checks, f"monte_carlo_{name}", abs(z) <= MC_SIGMAS, **mc[name])

    summary = {
        "full_value_t0": {
            "impact": {f"e{i + 1}": fv_imp[0, i] for i in range(K)},
            "no_impact": {f"e{i + 1}": fv_no[0, i] for i in range(K)},
        },
        "full_h_star_t0": {
            "impact": {f"e{i + 1}": s_imp.h_star[0, i] for i in range(K)},
            "no_impact": {f"e{i + 1}": s_no.h_star[0, i] for i in range(K)},
        },
        "partial_value_t0": {
            "impact": {"pi=e1": pv_imp[0, -1], "pi=e2": pv_imp[0, 0],
                       "pi0": value_partial(params, part_imp, 0.0, params.w0, params.pi0)},
            "no_impact": {"pi=e1": pv_no[0, -1], "pi=e2": pv_no[0, 0],
                          "pi0": value_partial(params, part_no, 0.0, params.w0, params.pi0)},
        },
        "averaged_benchmark_h_t0": float(bench(0.0, np.array([params.pi0]))[0]),
        "max_gain": {"value": gains.max(), "t": grid.times[k_max[0]], "pi": grid.pis[k_max[1]]},
        "min_gain": {"value": gains.min(), "t": grid.times[k_min[0]], "pi": grid.pis[k_min[1]]},
        "monte_carlo": mc,
    }
    diagnostics = {
        "full": {"impact": v_imp.diagnostics, "no_impact": v_no.diagnostics},
        "partial": {"impact": part_imp.diagnostics, "no_impact": part_no.diagnostics,
                    "averaged_benchmark": bench_val.diagnostics,
                    "cfl_margin_benchmark": 0.9 / check_cfl(bench_model, grid)},
        "runtimes_s": timings,
        "checks": checks,
    }
    report = ExperimentReport(cfg.raw, _deep_plain(summary), _deep_plain(diagnostics), checks,
                              {"full_impact": full_imp, "full_no_impact": full_no, "partial_impact": part_imp,
                               "partial_no_impact": part_no, "benchmark": bench_val})
    if not np.all(np.isfinite(gains)):
        raise StageError("summary", FloatingPointError("non-finite gain surface"))
    failed = [c for c in checks if not c["passed"]]
    if failed:
        raise CheckFailure(failed)
    if write:
        write_report(report, cfg, Path(out_dir or cfg.output.directory))
    return report


def _deep_plain(obj):
    if isinstance(obj, dict):
        return {k: _deep_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_deep_plain(v) for v in obj]
    return _plain(obj)


def write_report(report: ExperimentReport, cfg: Config, out: Path) -> None:
    params = cfg.model
    stride = cfg.output.time_stride
    (v_imp, s_imp), (v_no, s_no) = report.tables["full_impact"], report.tables["full_no_impact"]
    p_imp, p_no = report.tables["partial_impact"], report.tables["partial_no_impact"]
    fv_imp, fv_no = _full_values(params, v_imp), _full_values(params, v_no)

    with atomic_writer(out / "fig1_strategy_full.csv") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "state", "h_star_impact", "h_star_noimpact"])
        for n in strided(v_imp.times.size, stride):
            for i in range(params.K):
                wr.writerow([fmt(v_imp.times[n]), i + 1, fmt(s_imp.h_star[n, i]), fmt(s_no.h_star[n, i])])
    with atomic_writer(out / "fig2_value_full.csv") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "state", "value_impact", "value_noimpact"])
        for n in strided(v_imp.times.size, stride):
            for i in range(params.K):
                wr.writerow([fmt(v_imp.times[n]), i + 1, fmt(fv_imp[n, i]), fmt(fv_no[n, i])])

    grid = p_imp.grid
    pv_imp, pv_no = to_value(params, p_imp), to_value(params, p_no)
    for name, cols, a, b in (("fig3_strategy_partial.csv", ("h_star_impact", "h_star_noimpact"), p_imp.h_star, p_no.h_star),
                             ("fig4_value_partial.csv", ("value_impact", "value_noimpact"), pv_imp, pv_no)):
        with atomic_writer(out / name) as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "pi", *cols])
            for n in strided(grid.times.size, stride):
                for k in range(grid.pis.size):
                    wr.writerow([fmt(grid.times[n]), fmt(grid.pis[k]), fmt(a[n, k]), fmt(b[n, k])])
    write_gains_csv(out / "fig5_gains.csv", params, p_imp, report.tables["benchmark"], stride)
    write_json(out / "summary.json", {"config": report.config, **report.summary})
    diag = dict(report.diagnostics)
    diag.pop("checks", None)
    write_json(out / "diagnostics.json", {**diag, "checks": report.checks})
