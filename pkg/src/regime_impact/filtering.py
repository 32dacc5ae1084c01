"""Regime filter driven by observed price jumps.

Between jumps the conditional probabilities follow a deterministic flow (chain
transport plus the compensator correction); at a jump of size z_m they are
reweighted by the per-state intensities of that atom. All functions accept a batch
of filters with shape (..., K).
"""
from __future__ import annotations

import math

import numpy as np

from .model import ModelParams

NEG_CLAMP = 1e-14


class ImpossibleObservation(ValueError):
    """A jump was observed whose conditional intensity is zero."""


def filter_drift(params: ModelParams, pi, h, t: float = 0.0) -> np.ndarray:
    """d pi / dt between jumps."""
    pi = np.asarray(pi, dtype=float)
    up, down = params.rates_out(h)
    # outflow of state i, inflow from i-1 (down move) and i+1 (up move)
    out = -(up + down) * pi
    inflow = np.zeros_like(pi)
    inflow[..., 1:] += down[..., :-1] * pi[..., :-1]
    inflow[..., :-1] += up[..., 1:] * pi[..., 1:]
    lam_tot = params.jumps.total()
    lam_bar = pi @ lam_tot
    obs = -pi * (lam_tot - lam_bar[..., None])
    return out + inflow + obs


def two_state_drift(params: ModelParams, p1):
    """Filter drift of p1 = P(state 1) for K = 2, as A(p1) + B(p1)*h."""
    da, db, ua, ub = params.state_rate_coeffs()
    lam_tot = params.jumps.total() if params.jumps.n_atoms else np.zeros(2)
    a1, b1, a2, b2 = da[0], db[0], ua[1], ub[1]
    A = -p1 * a1 + (1 - p1) * a2 - p1 * (1 - p1) * (lam_tot[0] - lam_tot[1])
    B = p1 * b1 + (1 - p1) * b2
    return A, B


def bayes_update(params: ModelParams, pi, m: int) -> np.ndarray:
    """Posterior after observing a jump of atom m."""
    pi = np.asarray(pi, dtype=float)
    lam = params.jumps.intensities[:, m]
    post = pi * lam
    norm = post.sum(axis=-1, keepdims=True)
    if np.any(norm <= 0):
        raise ImpossibleObservation(f"jump of size {params.jumps.sizes[m]:g} has zero conditional intensity")
    return post / norm


def _normalise(pi):
    lo = pi.min()
    if lo < -NEG_CLAMP:
        raise FloatingPointError(f"filter left the simplex (component {lo:.3e})")
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum(axis=-1, keepdims=True)


def rk4_step(params: ModelParams, pi, t, dt, control):
    """One classical RK4 step of the filter flow; ``control(t, pi)`` gives h."""
    k1 = filter_drift(params, pi, control(t, pi))
    p2 = pi + 0.5 * dt * k1
    k2 = filter_drift(params, p2, control(t + 0.5 * dt, p2))
    p3 = pi + 0.5 * dt * k2
    k3 = filter_drift(params, p3, control(t + 0.5 * dt, p3))
    p4 = pi + dt * k3
    k4 = filter_drift(params, p4, control(t + dt, p4))
    return pi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def default_step(params: ModelParams) -> float:
    return 1e-3 * params.T


def propagate(params: ModelParams, pi, h_of_t, t0: float, t1: float, max_step: float | None = None):
    """Integrate the between-jump flow from t0 to t1 under the control h_of_t(t).

    Uses equal RK4 sub-steps no longer than ``max_step`` (default 1e-3*T), clamping
    round-off negatives and renormalising after each sub-step.
    """
    if t1 < t0:
        raise ValueError("propagate needs t0 <= t1")
    pi = np.array(pi, dtype=float)
    if t1 == t0:
        return pi
    max_step = default_step(params) if max_step is None else max_step
    n = max(1, math.ceil((t1 - t0) / max_step - 1e-9))
    dt = (t1 - t0) / n
    if callable(h_of_t):
        control = lambda t, p: h_of_t(t)  # noqa: E731
    else:
        control = lambda t, p: h_of_t  # noqa: E731
    for k in range(n):
        pi = _normalise(rk4_step(params, pi, t0 + k * dt, dt, control))
    return pi
