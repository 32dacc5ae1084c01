"""Exact Monte Carlo of the controlled regime / price / wealth system.

Events are generated by thinning against one constant dominating rate. Between
candidate times the deterministic part (filter flow, bond accrual) is integrated
with RK4 on a global grid of step 1e-3*T, so every path is advanced in lock-step
and the whole batch is vectorised. Randomness comes from a counter-based hash of
(seed, path, draw index): a path's draws do not depend on which other paths share
its batch.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .filtering import bayes_update, default_step, filter_drift, two_state_drift
from .io import atomic_writer, fmt
from .model import AdmissibilityError, ModelParams

FULL = "full"
PARTIAL = "partial"


class ThinningError(RuntimeError):
    """An intensity exceeded the dominating rate."""


# --- counter-based uniforms ------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def path_keys(seed: int, paths) -> np.ndarray:
    paths = np.asarray(paths, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_mix(np.full(paths.shape, seed % 2**64, dtype=np.uint64)) + (paths + np.uint64(1)) * _GOLDEN)


def uniforms(keys: np.ndarray, counters) -> np.ndarray:
    """U(0,1) draws indexed by (path key, counter); never exactly 0 or 1."""
    with np.errstate(over="ignore"):
        x = _mix(keys ^ _mix(np.asarray(counters, dtype=np.uint64) * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


# --- policies ------------------------------------------------------------------

class ConstantPolicy:
    """h(t, .) = h for every path; usable in either mode."""

    def __init__(self, h: float):
        self.h = float(h)

    def __call__(self, t, state):
        state = np.asarray(state)
        shape = state.shape[:-1] if state.ndim == 2 else state.shape
        return np.full(shape, self.h)


# --- results -------------------------------------------------------------------

@dataclass
class SimulationPath:
    seed: int
    path_index: int
    events: list  # (time, "chain", (i, j)) or (time, "jump", m)
    wealth_terminal: float
    report_times: np.ndarray
    wealth_path: np.ndarray
    chain_path: np.ndarray
    filter_path: np.ndarray | None
    occupation: np.ndarray
    filter_at_events: list = field(default_factory=list)


@dataclass
class BatchResult:
    logw: np.ndarray  # log(W_T / w0)
    y: np.ndarray  # chain state at T
    occupation: np.ndarray  # time spent in each state, shape (n, K)
    n_jumps: np.ndarray
    n_switches: np.ndarray
    events: list | None
    report: dict | None
    filter_at_events: list | None


def _initial_states(params, keys, y0):
    if y0 is not None:
        return np.full(keys.shape, int(y0), dtype=np.int64)
    u = uniforms(keys, np.zeros(keys.shape, dtype=np.uint64))
    cdf = np.cumsum(params.pi0)
    return np.minimum(np.searchsorted(cdf, u, side="right"), params.K - 1).astype(np.int64)


def _run(params: ModelParams, policy, mode: str, seed: int, paths, y0=None,
         record: bool = False, report_stride: int = 0) -> BatchResult:
    if mode not in (FULL, PARTIAL):
        raise ValueError(f"mode must be '{FULL}' or '{PARTIAL}'")
    paths = np.asarray(paths, dtype=np.int64)
    n = paths.size
    K = params.K
    T = params.T
    keys = path_keys(seed, paths)
    y = _initial_states(params, keys, y0)
    partial = mode == PARTIAL
    pi = np.tile(np.asarray(params.pi0, dtype=float), (n, 1)) if partial else None
    logw = np.zeros(n)
    occ = np.zeros((n, K))
    n_jumps = np.zeros(n, dtype=np.int64)
    n_switches = np.zeros(n, dtype=np.int64)
    t = np.zeros(n)
    rho = params.rho
    lam = np.asarray(params.jumps.intensities)
    z = params.jumps.sizes
    M = z.size
    da, db, ua, ub = params.state_rate_coeffs()
    bound = params.thinning_bound()
    counter = np.ones(n, dtype=np.uint64)

    def next_gap(idx):
        if bound == 0:
            return np.full(idx.size, np.inf)
        u = uniforms(keys[idx], counter[idx])
        counter[idx] += np.uint64(1)
        return -np.log(u) / bound

    cand = next_gap(np.arange(n))
    events = [[] for _ in range(n)] if record else None
    filt_ev = [[] for _ in range(n)] if record and partial else None

    two = partial and K == 2
    if two:
        coef = lambda p1: two_state_drift(params, p1)  # noqa: E731

    def control(tt, idx, p=None):
        if not partial:
            return policy(tt, y[idx])
        if two:
            p = np.stack([p, 1.0 - p], axis=-1)
        return policy(tt, p)

    def deriv(tt, idx, p):
        h = control(tt, idx, p)
        if not partial:
            dp = None
        elif two:
            A, B = coef(p)
            dp = A + B * h
        else:
            dp = filter_drift(params, p, h)
        return dp, (1 - h) * rho

    def flow(idx, t0, dt):
        """Advance the deterministic part of paths idx from t0 by dt (scalars or arrays)."""
        occ[idx, y[idx]] += dt
        if not partial:
            if rho != 0:
                k1 = deriv(t0, idx, None)[1]
                k2 = deriv(t0 + 0.5 * dt, idx, None)[1]
                k4 = deriv(t0 + dt, idx, None)[1]
                logw[idx] += dt / 6.0 * (k1 + 4 * k2 + k4)
            return
        p = pi[idx, 0] if two else pi[idx]
        dtc = dt if two or np.ndim(dt) == 0 else dt[:, None]
        d1, w1 = deriv(t0, idx, p)
        d2, w2 = deriv(t0 + 0.5 * dt, idx, p + 0.5 * dtc * d1)
        d3, w3 = deriv(t0 + 0.5 * dt, idx, p + 0.5 * dtc * d2)
        d4, w4 = deriv(t0 + dt, idx, p + dtc * d3)
        p = p + dtc / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
        if p.size and p.min() < -1e-14:
            raise FloatingPointError("filter left the simplex")
        if two:
            p = np.clip(p, 0.0, 1.0)
            pi[idx, 0] = p
            pi[idx, 1] = 1.0 - p
        else:
            p = np.maximum(p, 0.0)
            pi[idx] = p / p.sum(axis=1, keepdims=True)
        if rho != 0:
            logw[idx] += dt / 6.0 * (w1 + 2 * w2 + 2 * w3 + w4)

    def fire(idx):
        """Thinning decision at the candidate time of paths idx."""
        tt = t[idx]
        yi = y[idx]
        h = control(tt, idx, (pi[idx, 0] if two else pi[idx]) if partial else None)
        down = da[yi] - db[yi] * h
        up = ua[yi] + ub[yi] * h
        rates = np.column_stack([lam[yi], down, up]) if M else np.column_stack([down, up])
        total = rates.sum(axis=1)
        if np.any(total > bound * (1 + 1e-9)) or np.any(rates < -1e-12):
            raise ThinningError(f"intensity {total.max():.6g} exceeds dominating rate {bound:.6g}")
        u = uniforms(keys[idx], counter[idx])
        counter[idx] += np.uint64(1)
        pick = (u * bound)[:, None] < np.cumsum(rates, axis=1)
        accepted = pick[:, -1]
        kind = np.where(accepted, np.argmax(pick, axis=1), -1)
        for m in range(M):
            sel = kind == m
            if not sel.any():
                continue
            j = idx[sel]
            fac = 1.0 + h[sel] * z[m]
            if np.any(fac <= 0):
                raise AdmissibilityError(f"1 + h*z = {fac.min():g} <= 0 at an accepted jump")
            logw[j] += np.log1p(h[sel] * z[m])
            n_jumps[j] += 1
            if partial:
                pi[j] = bayes_update(params, pi[j], m)
            if record:
                for jj in j:
                    events[jj].append((float(t[jj]), "jump", m))
                    if partial:
                        filt_ev[jj].append((float(t[jj]), pi[jj].copy()))
        for offset, step in ((M, 1), (M + 1, -1)):
            sel = kind == offset
            if not sel.any():
                continue
            j = idx[sel]
            if record:
                for jj in j:
                    events[jj].append((float(t[jj]), "chain", (int(y[jj]), int(y[jj] + step))))
            y[j] += step
            n_switches[j] += 1
        cand[idx] = tt + next_gap(idx)

    n_steps = max(1, math.ceil(T / default_step(params) - 1e-9))
    grid = np.linspace(0.0, T, n_steps + 1)
    report = None
    if report_stride:
        rep_idx = list(range(0, n_steps + 1, report_stride))
        if rep_idx[-1] != n_steps:
            rep_idx.append(n_steps)
        report = {"times": grid[rep_idx], "logw": [], "y": [], "pi": []}
        rep_set = set(rep_idx)

    def snapshot():
        report["logw"].append(logw.copy())
        report["y"].append(y.copy())
        if partial:
            report["pi"].append(pi.copy())

    if report is not None:
        snapshot()
    for k in range(n_steps):
        target = grid[k + 1]
        hit = cand <= target
        # paths without a candidate in this step share (t, dt): one vectorised update
        flow(np.flatnonzero(~hit), grid[k], target - grid[k])
        idx = np.flatnonzero(hit)
        while idx.size:
            stop = np.minimum(cand[idx], target)
            flow(idx, t[idx], stop - t[idx])
            t[idx] = stop
            hit = cand[idx] <= target
            if hit.any():
                fire(idx[hit])
            idx = idx[hit]
        t[:] = target
        if report is not None and (k + 1) in rep_set:
            snapshot()
    return BatchResult(logw, y, occ, n_jumps, n_switches, events, report, filt_ev)


def simulate_path(params: ModelParams, policy, mode: str = FULL, seed: int = 0, path_index: int = 0,
                  y0: int | None = None, report_stride: int = 10) -> SimulationPath:
    """Simulate one path with its full event log; reproducible from (seed, path_index)."""
    b = _run(params, policy, mode, seed, [path_index], y0=y0, record=True, report_stride=report_stride)
    rep = b.report
    wealth = params.w0 * np.exp(np.array(rep["logw"])[:, 0])
    return SimulationPath(
        seed=seed,
        path_index=path_index,
        events=b.events[0],
        wealth_terminal=float(params.w0 * np.exp(b.logw[0])),
        report_times=rep["times"],
        wealth_path=wealth,
        chain_path=np.array(rep["y"])[:, 0],
        filter_path=np.array(rep["pi"])[:, 0] if mode == PARTIAL else None,
        occupation=b.occupation[0],
        filter_at_events=b.filter_at_events[0] if b.filter_at_events else [],
    )


def simulate_batch(params: ModelParams, policy, mode: str = FULL, n_paths: int = 1000, seed: int = 0,
                   y0: int | None = None, first_path: int = 0) -> BatchResult:
    """Paths first_path .. first_path+n_paths-1 without event logs (terminal quantities only)."""
    return _run(params, policy, mode, seed, np.arange(first_path, first_path + n_paths), y0=y0)


def write_path_csv(path, sim: SimulationPath) -> None:
    """Event rows (t, kind, detail) followed by reporting-grid rows (t, wealth, pi, chain_state)."""
    with atomic_writer(path) as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["section", "t", "kind", "detail", "wealth", "pi", "chain_state"])
        for t, kind, detail in sim.events:
            det = f"{detail[0] + 1}->{detail[1] + 1}" if kind == "chain" else f"atom{detail}"
            wr.writerow(["event", fmt(t), kind, det, "", "", ""])
        for k, t in enumerate(sim.report_times):
            pi = "" if sim.filter_path is None else " ".join(fmt(x) for x in sim.filter_path[k])
            wr.writerow(["grid", fmt(t), "", "", fmt(sim.wealth_path[k]), pi, int(sim.chain_path[k]) + 1])


def default_threads() -> int:
    env = os.environ.get("REGIME_IMPACT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def terminal_wealth(params: ModelParams, policy, mode: str, n_paths: int, seed: int,
                    y0: int | None = None, threads: int | None = None, batch: int = 25_000) -> np.ndarray:
    """W_T for paths 0..n_paths-1, in path order regardless of batching."""
    chunks = [np.arange(s, min(s + batch, n_paths)) for s in range(0, n_paths, batch)]
    threads = threads or default_threads()
    run = lambda ids: _run(params, policy, mode, seed, ids, y0=y0).logw  # noqa: E731
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return params.w0 * np.exp(np.concatenate(parts))


def estimate_value(params: ModelParams, policy, mode: str = FULL, n_paths: int = 10_000, seed: int = 0,
                   y0: int | None = None, threads: int | None = None) -> tuple[float, float]:
    """Sample mean and standard error of U(W_T)."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2 for a standard error")
    u = params.utility(terminal_wealth(params, policy, mode, n_paths, seed, y0, threads))
    return float(np.mean(u)), float(np.std(u, ddof=1) / math.sqrt(n_paths))
