"""Full-information solver: the regime is observed.

With U = log, V(t, w, e_i) = log w + beta(t, e_i); with U = w^theta/theta,
V(t, w, e_i) = w^theta/theta * exp(theta*gamma(t, e_i)). Both beta and gamma solve
backward ODE systems with a pointwise supremum over the position h, which are
swept from the zero terminal condition towards t = 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .control import control_grid, maximize
from .io import atomic_writer, fmt, strided
from .model import LogUtility, ModelParams, PowerUtility

DEFAULT_STEPS = 2000
DEFAULT_CONTROLS = 501
TRANSFORM_RTOL = 1e-6


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ValueTableFull:
    times: np.ndarray
    values: np.ndarray  # beta (log) or gamma (power), shape (N+1, K)
    utility: object
    transformed: np.ndarray | None = None  # F = exp(theta*gamma) from the linear sweep
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StrategyTableFull:
    times: np.ndarray
    h_star: np.ndarray  # shape (N+1, K)

    def __call__(self, t, state):
        """Linear-in-t lookup of h*(t, state); vectorised over paths."""
        t = np.asarray(t, dtype=float)
        state = np.asarray(state)
        n = self.times.size - 1
        x = np.clip(t, self.times[0], self.times[-1]) / self.times[-1] * n
        k = np.minimum(np.floor(x).astype(int), n - 1)
        w = x - k
        return (1 - w) * self.h_star[k, state] + w * self.h_star[k + 1, state]


# --- no-impact log utility -------------------------------------------------------

def log_foc(params: ModelParams, i: int, h) -> float:
    """First-order condition residual  sum_m lambda_{i,m} z_m / (1 + h z_m) - rho."""
    z = params.jumps.sizes
    lam = params.jumps.intensities[i]
    return float(np.sum(lam * z / (1.0 + h * z)) - params.rho)


def _log_objective(params, i, h):
    z = params.jumps.sizes
    lam = params.jumps.intensities[i]
    return (1 - h) * params.rho + float(np.sum(lam * np.log1p(h * z)))


def _two_point(params: ModelParams):
    z = params.jumps.sizes
    if z.size == 2 and z[0] > 0 and np.isclose(z[1], -z[0], rtol=0, atol=1e-15 * z[0]):
        return z[0]
    return None


def log_no_impact_strategy(params: ModelParams, i: int, t: float = 0.0) -> float:
    """Myopic optimal position in state i for log utility without impact.

    The FOC is strictly decreasing in h, so the optimum is its unique root on the
    effective control set, or the endpoint towards which the objective increases.
    """
    hm = params.h_max
    f_lo, f_hi = log_foc(params, i, -hm), log_foc(params, i, hm)
    if f_lo <= 0 and f_hi <= 0 or f_lo >= 0 and f_hi >= 0:
        if f_lo == 0:
            return -hm
        if f_hi == 0:
            return hm
        lo_v, hi_v = _log_objective(params, i, -hm), _log_objective(params, i, hm)
        return hm if hi_v > lo_v else -hm
    jump = _two_point(params)
    if jump is not None:
        lp, lm = params.jumps.intensities[i]
        # rho*z^2 h^2 - z^2 (l+ + l-) h + z (l+ - l-) - rho = 0; the small root, in
        # cancellation-free form, also covers rho = 0
        a = params.rho * jump**2
        b = -jump**2 * (lp + lm)
        c = jump * (lp - lm) - params.rho
        h = 2 * c / (-b + np.sqrt(b * b - 4 * a * c))
        if -hm <= h <= hm:
            return float(h)
    return float(brentq(lambda h: log_foc(params, i, h), -hm, hm, xtol=1e-14, rtol=1e-15))


# --- HJB sweeps ------------------------------------------------------------------

class _Hamiltonian:
    """Per-state right-hand side of the beta/gamma ODE at frozen later-time values."""

    def __init__(self, params: ModelParams, n_controls: int):
        self.params = params
        self.rho = params.rho
        self.da, self.db, self.ua, self.ub = params.state_rate_coeffs()
        self.z = params.jumps.sizes
        self.lam = np.asarray(params.jumps.intensities)
        self.lam_b = self.lam[:, None, :]
        self.lam_b2 = np.concatenate([self.lam, self.lam])[:, None, :]
        self.power = isinstance(params.utility, PowerUtility)
        self.theta = params.utility.theta if self.power else None
        self.grid = control_grid(params.h_max, n_controls)[None, :]
        self._grid_jump = self._jump(np.broadcast_to(self.grid, (params.K, n_controls)))

    def rates(self, h):
        # h has shape (K, m)
        down = self.da[:, None] - self.db[:, None] * h
        up = self.ua[:, None] + self.ub[:, None] * h
        return down, up

    def jump_term(self, h):
        if h is self.grid:
            return self._grid_jump
        return self._jump(h)

    def _jump(self, h):
        x = h[..., None] * self.z
        if self.power:
            g = np.expm1(self.theta * np.log1p(x)) / self.theta
        else:
            g = np.log1p(x)
        lam = self.lam_b if g.shape[0] == self.lam.shape[0] else self.lam_b2
        return (g * lam).sum(axis=-1)

    def coupling(self, v):
        """Chain-coupling coefficients (towards i+1, towards i-1) per state."""
        diff_dn = np.zeros_like(v)
        diff_up = np.zeros_like(v)
        diff_dn[:-1] = v[1:] - v[:-1]
        diff_up[1:] = v[:-1] - v[1:]
        if self.power:
            return np.expm1(self.theta * diff_dn) / self.theta, np.expm1(self.theta * diff_up) / self.theta
        return diff_dn, diff_up

    def objective_at(self, v):
        """h -> RHS for controls of shape (K, m), with the values v frozen."""
        c_dn, c_up = self.coupling(v)
        # affine part in h: (rho + c_dn*da + c_up*ua) + h*(-rho - c_dn*db + c_up*ub)
        const = (self.rho + c_dn * self.da + c_up * self.ua)[:, None]
        slope = (-self.rho - c_dn * self.db + c_up * self.ub)[:, None]
        return lambda h, jump=None: const + slope * h + (self.jump_term(h) if jump is None else jump)

    def rhs_frozen(self, v, h):
        """d(value)/d(time-to-maturity) with the control vector h fixed."""
        return self.objective_at(v)(h[:, None])[:, 0]

    # linear sweep in F = exp(theta*gamma)
    def objective_F_at(self, F, sign=1.0):
        dn = np.zeros_like(F)
        upd = np.zeros_like(F)
        dn[:-1] = F[1:] - F[:-1]
        upd[1:] = F[:-1] - F[1:]
        tf = self.theta * F
        const = (tf * self.rho + dn * self.da + upd * self.ua)[:, None]
        slope = (-tf * self.rho - dn * self.db + upd * self.ub)[:, None]
        tf = tf[:, None]
        return lambda h, jump=None: sign * (const + slope * h + tf * (self.jump_term(h) if jump is None else jump))

    def generator_F(self, h):
        """Matrix M(h) with dF/d(time-to-maturity) = M F, row i using control h[i]."""
        K = h.size
        down, up = self.rates(h[:, None])
        down, up = down[:, 0], up[:, 0]
        th = self.theta
        M = np.zeros((K, K))
        diag = th * (1 - h) * self.rho + th * self.jump_term(h[:, None])[:, 0] - down - up
        M[np.arange(K), np.arange(K)] = diag
        M[np.arange(K - 1), np.arange(1, K)] = down[:-1]
        M[np.arange(1, K), np.arange(K - 1)] = up[1:]
        return M


def _check_finite(arr, n, times, h, what):
    if not np.all(np.isfinite(arr)):
        i = int(np.flatnonzero(~np.isfinite(np.atleast_1d(arr)))[0])
        raise SolverError(f"non-finite {what} at t={times[n]:.6g}, state={i}, h={h[i]:.6g}")


def solve_full(params: ModelParams, impact: bool = True, n_steps: int = DEFAULT_STEPS,
               n_controls: int = DEFAULT_CONTROLS, tol: float = 1e-6):
    """Backward sweep for beta (log) or gamma (power) on a uniform time grid.

    At every grid time the maximiser is found from the values already known there;
    the ODE is then carried one step towards t = 0 with that control frozen (RK4).
    Power utility additionally runs the linear sweep in F = exp(theta*gamma), stepped
    with the exact matrix exponential, and checks both agree.
    """
    if not impact:
        params = params.without_impact()
    ham = _Hamiltonian(params, n_controls)
    K = params.K
    times = np.linspace(0.0, params.T, n_steps + 1)
    dt = params.T / n_steps
    hm = params.h_max
    vals = np.zeros((n_steps + 1, K))
    hs = np.zeros((n_steps + 1, K))
    sign = 1.0 if not ham.power or ham.theta > 0 else -1.0

    F = np.ones((n_steps + 1, K)) if ham.power else None

    for n in range(n_steps, -1, -1):
        v = vals[n]
        obj = ham.objective_at(v)
        if ham.power:
            # the F sweep maximises its own objective; both share one vectorised search
            obj_F = ham.objective_F_at(F[n], sign)

            def both(hh, a=obj, b=obj_F):
                if hh is ham.grid:
                    return np.concatenate([a(hh), b(hh)])
                jump = ham.jump_term(hh)
                return np.concatenate([a(hh[:K], jump[:K]), b(hh[K:], jump[K:])])
            h2, r2 = maximize(both, hm, n_controls, tol, grid=ham.grid)
            h, k1, hF = h2[:K], r2[:K], h2[K:]
        else:
            h, k1 = maximize(obj, hm, n_controls, tol, grid=ham.grid)
        _check_finite(k1, n, times, h, "Hamiltonian")
        hs[n] = h
        if n == 0:
            break
        k2 = ham.rhs_frozen(v + 0.5 * dt * k1, h)
        k3 = ham.rhs_frozen(v + 0.5 * dt * k2, h)
        k4 = ham.rhs_frozen(v + dt * k3, h)
        vals[n - 1] = v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(vals[n - 1], n - 1, times, h, "value")
        if ham.power:
            F[n - 1] = expm(dt * ham.generator_F(hF)) @ F[n]
            _check_finite(F[n - 1], n - 1, times, hF, "transformed value")

    diagnostics = {"n_steps": n_steps, "n_controls": n_controls, "impact": impact}
    if ham.power:
        gap = np.max(np.abs(np.exp(ham.theta * vals) - F) / np.abs(F))
        diagnostics["transform_max_rel_gap"] = float(gap)
        if gap > TRANSFORM_RTOL:
            raise SolverError(f"gamma sweep and F sweep disagree: max relative gap {gap:.3e}")
    transformed = F

    value = ValueTableFull(times, vals, params.utility, transformed, diagnostics)
    return value, StrategyTableFull(times, hs)


def value_full(params: ModelParams, table: ValueTableFull, t: float, w: float, i: int) -> float:
    if not w > 0:
        raise ValueError("wealth must be > 0")
    v = float(np.interp(t, table.times, table.values[:, i]))
    if isinstance(table.utility, LogUtility):
        return float(np.log(w) + v)
    th = table.utility.theta
    return float(w**th / th * np.exp(th * v))


def write_full_csv(path, value: ValueTableFull, strategy: StrategyTableFull, stride: int = 1) -> None:
    with atomic_writer(path) as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "state", "beta_or_gamma", "h_star"])
        for n in strided(value.times.size, stride):
            for i in range(value.values.shape[1]):
                wr.writerow([fmt(value.times[n]), i + 1, fmt(value.values[n, i]), fmt(strategy.h_star[n, i])])
