"""Partial-information solver for two regimes.

The investor sees only prices, so the state is the filter pi = P(bull | prices).
With U = log, V(t, w, pi) = log w + B(t, pi); with U = w^theta/theta,
V(t, w, pi) = w^theta/theta * G(t, pi), G(T, .) = 1. B and G solve a first-order
PIDE in (t, pi) whose transport term is the filter drift and whose nonlocal term
evaluates the value at the Bayes-updated filter after each jump type. It is solved
backwards with an explicit scheme: upwind differences in pi (forward where the
drift is non-negative, backward otherwise), linear interpolation at the updated
points, and a node-wise supremum over the control.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .control import control_grid, maximize
from .filtering import two_state_drift
from .full_info import SolverError, solve_full
from .io import atomic_writer, fmt, strided
from .model import DiscreteCompensator, LogUtility, ModelParams, PowerUtility, generator_matrix

CFL_LIMIT = 0.9
DEFAULT_NT = 4000
DEFAULT_NPI = 200
DEFAULT_CONTROLS = 201


class CFLError(ValueError):
    def __init__(self, cfl: float, min_n_t: int, message: str):
        super().__init__(message)
        self.cfl = cfl
        self.min_n_t = min_n_t


@dataclass(frozen=True)
class Grid2:
    n_t: int
    n_pi: int
    T: float

    def __post_init__(self):
        if self.n_t < 1 or self.n_pi < 2:
            raise ValueError("grid needs n_t >= 1 and n_pi >= 2")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dpi(self) -> float:
        return 1.0 / self.n_pi

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def pis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_pi + 1)


class UnsupportedModel(ValueError):
    """The model lies outside what the PDE grid implements."""


def _require_two_states(params: ModelParams):
    if params.K != 2:
        raise UnsupportedModel("partial-information PDE supports K=2 only")


def cfl_rate(params: ModelParams, n_pi: int) -> float:
    """Worst-case rate that multiplies dt in the explicit update."""
    _require_two_states(params)
    A, B = two_state_drift(params, np.linspace(0.0, 1.0, n_pi + 1))
    hm = params.h_max
    # affine in h, so the extremes sit at the ends of the control set
    drift = max(np.abs(A - hm * B).max(), np.abs(A + hm * B).max())
    jumps = params.jumps.total().max() if params.jumps.n_atoms else 0.0
    theta = abs(params.utility.theta) if isinstance(params.utility, PowerUtility) else 0.0
    return float(jumps + drift * n_pi + params.max_chain_rate() + theta * params.rho * (1 + hm))


def make_grid(params: ModelParams, n_t: int = DEFAULT_NT, n_pi: int = DEFAULT_NPI, impact: bool = True) -> Grid2:
    """Grid2 for this model, rejecting sizes that break the explicit-scheme stability bound."""
    grid = Grid2(n_t, n_pi, params.T)
    check_cfl(params if impact else params.without_impact(), grid)
    return grid


def check_cfl(params: ModelParams, grid: Grid2) -> float:
    rate = cfl_rate(params, grid.n_pi)
    cfl = grid.dt * rate
    if cfl > CFL_LIMIT:
        min_n_t = math.ceil(params.T * rate / CFL_LIMIT)
        raise CFLError(cfl, min_n_t,
                       f"CFL bound violated: dt*rate = {cfl:.4g} > {CFL_LIMIT} "
                       f"(rate {rate:.6g}); need n_t >= {min_n_t}")
    return cfl


@dataclass(frozen=True)
class ValueTablePartial:
    grid: Grid2
    values: np.ndarray  # B' (log) or Gamma' (power), shape (n_t+1, n_pi+1)
    h_star: np.ndarray
    utility: object
    diagnostics: dict = field(default_factory=dict)

    def strategy(self, h_max: float | None = None):
        return PartialPolicy(self.grid, self.h_star, h_max)


class PartialPolicy:
    """Bilinear lookup of a (t, pi) control table, clamped to the control set."""

    def __init__(self, grid: Grid2, table: np.ndarray, h_max: float | None = None):
        self.grid = grid
        self.table = table
        self.h_max = h_max

    def __call__(self, t, pi):
        out = bilinear(self.grid, self.table, t, np.asarray(pi, dtype=float)[..., 0])
        if self.h_max is not None:
            out = np.clip(out, -self.h_max, self.h_max)
        return out


def bilinear(grid: Grid2, table: np.ndarray, t, p1):
    if np.ndim(t) == 0:
        # one time for every point: interpolate the row once, then in pi
        x = min(max(float(t) / grid.T, 0.0), 1.0) * grid.n_t
        i = min(int(x), grid.n_t - 1)
        u = x - i
        row = (1 - u) * table[i] + u * table[i + 1]
        y = np.clip(np.asarray(p1, dtype=float), 0.0, 1.0) * grid.n_pi
        j = np.minimum(y.astype(int), grid.n_pi - 1)
        v = y - j
        return row[j] + v * (row[j + 1] - row[j])
    x = np.clip(np.asarray(t, dtype=float) / grid.T, 0.0, 1.0) * grid.n_t
    y = np.clip(np.asarray(p1, dtype=float), 0.0, 1.0) * grid.n_pi
    i = np.minimum(np.floor(x).astype(int), grid.n_t - 1)
    j = np.minimum(np.floor(y).astype(int), grid.n_pi - 1)
    u = x - i
    v = y - j
    return ((1 - u) * ((1 - v) * table[i, j] + v * table[i, j + 1])
            + u * ((1 - v) * table[i + 1, j] + v * table[i + 1, j + 1]))


class _Scheme:
    """One explicit backward step of the two-regime PIDE."""

    def __init__(self, params: ModelParams, grid: Grid2, n_controls: int):
        _require_two_states(params)
        self.params = params
        self.grid = grid
        self.power = isinstance(params.utility, PowerUtility)
        self.theta = params.utility.theta if self.power else None
        self.sign = -1.0 if self.power and self.theta < 0 else 1.0
        self.rho = params.rho
        pis = grid.pis
        self.pis = pis
        self.A, self.B = two_state_drift(params, pis)
        lam = np.asarray(params.jumps.intensities)  # (2, M)
        self.z = params.jumps.sizes
        self.lam_bar = pis[:, None] * lam[0] + (1 - pis[:, None]) * lam[1]  # (n+1, M)
        self.lam_tot = self.lam_bar.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            post = pis[:, None] * lam[0] / self.lam_bar
        self.post = np.where(self.lam_bar > 0, post, pis[:, None])
        # interpolation weights for the Bayes-updated points
        y = np.clip(self.post, 0.0, 1.0) * grid.n_pi
        self.post_j = np.minimum(np.floor(y).astype(int), grid.n_pi - 1)
        self.post_w = y - self.post_j
        self.hgrid = control_grid(params.h_max, n_controls)[None, :]
        self.n_controls = n_controls
        self._drift_grid = self.A[:, None] + self.B[:, None] * self.hgrid
        self._fac_grid = self._factor(self.hgrid[0])  # (M, n_controls)
        if not self.power:
            self._log_jump_grid = self.lam_bar @ self._fac_grid + self.rho * (1 - self.hgrid)

    def _factor(self, h):
        x = np.multiply.outer(self.z, h)
        if self.power:
            return np.exp(self.theta * np.log1p(x))
        return np.log1p(x)

    def prepare(self, V):
        """Node-only quantities for the row V: one-sided slopes and updated-point values."""
        dpi = self.grid.dpi
        fwd = np.zeros_like(V)
        bwd = np.zeros_like(V)
        fwd[:-1] = (V[1:] - V[:-1]) / dpi
        bwd[1:] = (V[1:] - V[:-1]) / dpi
        Vpost = (1 - self.post_w) * V[self.post_j] + self.post_w * V[self.post_j + 1]  # (n+1, M)
        return fwd, bwd, Vpost

    def objective_grid(self, V, prep):
        fwd, bwd, Vpost = prep
        d = self._drift_grid
        up = np.maximum(d, 0.0) * fwd[:, None] + np.minimum(d, 0.0) * bwd[:, None]
        if self.power:
            base = self.theta * self.rho * (1 - self.hgrid) - self.lam_tot[:, None]
            return V[:, None] * base + (self.lam_bar * Vpost) @ self._fac_grid + up
        node = (self.lam_bar * (Vpost - V[:, None])).sum(axis=1)
        return self._log_jump_grid + node[:, None] + up

    def objective(self, V, prep, h):
        """Objective at per-node controls h of shape (n+1, m)."""
        fwd, bwd, Vpost = prep
        d = self.A[:, None] + self.B[:, None] * h
        up = np.maximum(d, 0.0) * fwd[:, None] + np.minimum(d, 0.0) * bwd[:, None]
        x = h[..., None] * self.z  # (n+1, m, M)
        if self.power:
            fac = np.exp(self.theta * np.log1p(x))
            jump = (fac * (self.lam_bar * Vpost)[:, None, :]).sum(axis=-1) - (self.lam_tot * V)[:, None]
            return self.theta * self.rho * (1 - h) * V[:, None] + jump + up
        jump = (np.log1p(x) * self.lam_bar[:, None, :]).sum(axis=-1)
        node = (self.lam_bar * (Vpost - V[:, None])).sum(axis=1)
        return self.rho * (1 - h) + jump + node[:, None] + up

    def best(self, V, tol):
        prep = self.prepare(V)
        grid_vals = self.sign * self.objective_grid(V, prep)

        def obj(h):
            if h is self.hgrid:
                return grid_vals
            return self.sign * self.objective(V, prep, h)

        h, val = maximize(obj, self.params.h_max, self.n_controls, tol, grid=self.hgrid)
        return h, self.sign * val

    def rate(self, V, h):
        return self.objective(V, self.prepare(V), h[:, None])[:, 0]


def _terminal(params, grid):
    if isinstance(params.utility, PowerUtility):
        return np.ones(grid.n_pi + 1)
    return np.zeros(grid.n_pi + 1)


def _check_row(row, n, grid, h, power):
    bad = ~np.isfinite(row)
    if power:
        bad |= row <= 0
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SolverError(f"invalid value {row[k]!r} at t={grid.times[n]:.6g}, pi={grid.pis[k]:.6g}, h={h[k]:.6g}")


def solve_partial(params: ModelParams, grid: Grid2 | None = None, impact: bool = True,
                  n_controls: int = DEFAULT_CONTROLS, tol: float = 1e-6) -> ValueTablePartial:
    _require_two_states(params)
    if not impact:
        params = params.without_impact()
    grid = grid or Grid2(DEFAULT_NT, DEFAULT_NPI, params.T)
    cfl = check_cfl(params, grid)
    sch = _Scheme(params, grid, n_controls)
    vals = np.empty((grid.n_t + 1, grid.n_pi + 1))
    hs = np.empty_like(vals)
    vals[-1] = _terminal(params, grid)
    dt = grid.dt
    for n in range(grid.n_t, -1, -1):
        h, r = sch.best(vals[n], tol)
        hs[n] = h
        if n == 0:
            break
        vals[n - 1] = vals[n] + dt * r
        _check_row(vals[n - 1], n - 1, grid, h, sch.power and sch.theta > 0)
    diag = {"n_t": grid.n_t, "n_pi": grid.n_pi, "cfl": cfl, "cfl_margin": CFL_LIMIT / cfl if cfl else math.inf,
            "n_controls": n_controls, "impact": impact}
    return ValueTablePartial(grid, vals, hs, params.utility, diag)


def evaluate_fixed_strategy(params: ModelParams, grid: Grid2, strategy, impact: bool = True) -> ValueTablePartial:
    """Value of following ``strategy(t, pi) -> controls`` under the filtered dynamics.

    ``pi`` is passed as an (n_pi+1, 2) array of filter vectors, one per grid node.

    Same explicit sweep as :func:`solve_partial` with the supremum replaced by the
    given control, which is read at the later time of each step.
    """
    _require_two_states(params)
    if not impact:
        params = params.without_impact()
    cfl = check_cfl(params, grid)
    sch = _Scheme(params, grid, DEFAULT_CONTROLS)
    vals = np.empty((grid.n_t + 1, grid.n_pi + 1))
    hs = np.empty_like(vals)
    vals[-1] = _terminal(params, grid)
    times, pis = grid.times, grid.pis
    nodes = np.column_stack([pis, 1 - pis])
    hm = params.h_max
    for n in range(grid.n_t, -1, -1):
        h = np.broadcast_to(np.asarray(strategy(times[n], nodes), dtype=float), pis.shape).copy()
        if np.any(np.abs(h) > hm + 1e-12):
            raise ValueError(f"strategy leaves the control set at t={times[n]:.6g}")
        hs[n] = h
        if n == 0:
            break
        vals[n - 1] = vals[n] + grid.dt * sch.rate(vals[n], h)
        _check_row(vals[n - 1], n - 1, grid, h, sch.power and sch.theta > 0)
    return ValueTablePartial(grid, vals, hs, params.utility, {"cfl": cfl, "impact": impact, "fixed_strategy": True})


def averaged_model(params: ModelParams) -> ModelParams:
    """Regime-blind model: both states carry the stationary-average jump intensities."""
    Q0 = generator_matrix(params, 0.0)
    K = params.K
    # stationary distribution of the h = 0 generator: p Q = 0, sum p = 1
    A = np.vstack([Q0.T, np.ones(K)])
    rhs = np.zeros(K + 1)
    rhs[-1] = 1.0
    p = np.linalg.lstsq(A, rhs, rcond=None)[0]
    lam_avg = p @ np.asarray(params.jumps.intensities)
    jumps = DiscreteCompensator(params.jumps.sizes, np.tile(lam_avg, (K, 1)))
    blind = ModelParams(forward=params.forward, backward=params.backward, jumps=jumps, rho=params.rho,
                        utility=params.utility, T=params.T, w0=params.w0, L=params.L, pi0=params.pi0)
    return blind.without_impact()


def averaged_parameter_strategy(params: ModelParams, n_steps: int | None = None):
    """Control of an investor who ignores regimes and uses averaged intensities.

    Returns a callable (t, pi) -> h that disregards pi.
    """
    blind = averaged_model(params)
    kw = {} if n_steps is None else {"n_steps": n_steps}
    _, strat = solve_full(blind, impact=False, **kw)

    def strategy(t, pi):
        return np.broadcast_to(strat(t, 0), np.shape(pi)[:-1]).astype(float)

    strategy.table = strat
    strategy.model = blind
    return strategy


def value_partial(params: ModelParams, table: ValueTablePartial, t: float, w: float, pi) -> float:
    if not w > 0:
        raise ValueError("wealth must be > 0")
    p1 = float(np.asarray(pi, dtype=float).reshape(-1)[0])
    v = float(bilinear(table.grid, table.values, t, p1))
    if isinstance(table.utility, LogUtility):
        return float(np.log(w) + v)
    th = table.utility.theta
    return float(w**th / th * v)


def write_partial_csv(path, table: ValueTablePartial, stride: int = 1) -> None:
    pis = table.grid.pis
    times = table.grid.times
    with atomic_writer(path) as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "pi", "value", "h_star"])
        for n in strided(times.size, stride):
            for k in range(pis.size):
                wr.writerow([fmt(times[n]), fmt(pis[k]), fmt(table.values[n, k]), fmt(table.h_star[n, k])])


def write_gains_csv(path, params: ModelParams, filtered: ValueTablePartial, averaged: ValueTablePartial,
                    stride: int = 1) -> None:
    pis = filtered.grid.pis
    times = filtered.grid.times
    vf = to_value(params, filtered)
    va = to_value(params, averaged)
    with atomic_writer(path) as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "pi", "value_filtered", "value_averaged", "gain"])
        for n in strided(times.size, stride):
            for k in range(pis.size):
                wr.writerow([fmt(times[n]), fmt(pis[k]), fmt(vf[n, k]), fmt(va[n, k]), fmt(vf[n, k] - va[n, k])])


def to_value(params: ModelParams, table: ValueTablePartial) -> np.ndarray:
    """Value surface V(t, w0, pi) over the whole grid."""
    if isinstance(table.utility, LogUtility):
        return np.log(params.w0) + table.values
    th = table.utility.theta
    return params.w0**th / th * table.values
