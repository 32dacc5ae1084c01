"""Market model: controlled regime generator, discrete jump compensator, wealth and utility.

States are ordered from best (index 0, "bull") to worst. A transition towards a
worse state (i -> i+1) has intensity ``a - b*h`` and a transition towards a better
state (i+1 -> i) has intensity ``a + b*h``, so buying pushes the market up.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

# Fraction shaved off each end of [-L, L] so that 1 + h*z stays strictly positive.
CONTROL_MARGIN = 1e-3


class ModelError(ValueError):
    """Raised when parameters violate a model invariant."""


class AdmissibilityError(ValueError):
    """Raised when a position would make wealth non-positive after a jump."""


@dataclass(frozen=True)
class LogUtility:
    def __call__(self, w):
        return np.log(w)

    def describe(self) -> dict:
        return {"kind": "log"}


@dataclass(frozen=True)
class PowerUtility:
    theta: float

    def __post_init__(self):
        if not (self.theta < 1.0) or self.theta == 0.0 or not math.isfinite(self.theta):
            raise ModelError(f"power utility needs theta < 1 and theta != 0, got {self.theta}")

    def __call__(self, w):
        return np.power(w, self.theta) / self.theta

    def describe(self) -> dict:
        return {"kind": "power", "theta": self.theta}


Utility = Union[LogUtility, PowerUtility]


@dataclass(frozen=True)
class DiscreteCompensator:
    """Jump measure as a finite list of atoms.

    ``sizes[m]`` is the relative price jump z_m and ``intensities[i, m]`` the rate of
    that jump while the chain sits in state i. An empty atom list means no jumps.
    """

    sizes: np.ndarray
    intensities: np.ndarray

    def __init__(self, sizes: Sequence[float], intensities):
        sizes = np.asarray(sizes, dtype=float).reshape(-1)
        lam = np.asarray(intensities, dtype=float)
        if lam.ndim == 1:
            lam = lam.reshape(-1, 1) if sizes.size == 1 else lam.reshape(1, -1)
        if lam.ndim != 2 or lam.shape[1] != sizes.size:
            raise ModelError(f"intensities must have shape (K, {sizes.size}), got {lam.shape}")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(sizes))):
            raise ModelError("jump sizes and intensities must be finite")
        if np.any(lam < 0):
            raise ModelError("jump intensities must be non-negative")
        if np.any(sizes == 0):
            raise ModelError("a jump of size 0 is not a jump")
        if np.any(sizes <= -1):
            raise ModelError("jump sizes must exceed -1 to keep prices positive")
        if sizes.size and np.any(lam.max(axis=0) == 0):
            raise ModelError("every atom needs a positive intensity in at least one state")
        sizes.setflags(write=False)
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "intensities", lam)

    @classmethod
    def two_point(cls, jump: float, lam_up: Sequence[float], lam_down: Sequence[float]):
        """Up/down jumps of size +jump / -jump with per-state rates."""
        return cls([jump, -jump], np.column_stack([lam_up, lam_down]))

    @property
    def n_atoms(self) -> int:
        return self.sizes.size

    @property
    def n_states(self) -> int:
        return self.intensities.shape[0]

    def total(self) -> np.ndarray:
        """Total jump rate per state."""
        return self.intensities.sum(axis=1)

    def mixed(self, pi) -> np.ndarray:
        """Filtered rates lambda_bar_m(pi) = sum_j pi_j lambda_{j,m}; pi has shape (..., K)."""
        return np.asarray(pi, dtype=float) @ self.intensities

    def __eq__(self, other):
        if not isinstance(other, DiscreteCompensator):
            return NotImplemented
        return (np.array_equal(self.sizes, other.sizes)
                and np.array_equal(self.intensities, other.intensities))

    def __hash__(self):
        return hash((self.sizes.tobytes(), self.intensities.tobytes()))


@dataclass(frozen=True)
class ModelParams:
    """Full parameterisation of the market, the investor's impact and preferences.

    ``forward[i] = (a, b)`` gives q^{i,i+1}(h) = a - b*h and ``backward[i] = (a, b)``
    gives q^{i+1,i}(h) = a + b*h, for i = 0..K-2.
    """

    forward: tuple
    backward: tuple
    jumps: DiscreteCompensator
    rho: float = 0.0
    utility: Utility = field(default_factory=LogUtility)
    T: float = 1.0
    w0: float = 1.0
    L: float = 50.0
    pi0: tuple | None = None

    def __post_init__(self):
        fwd = tuple((float(a), float(b)) for a, b in self.forward)
        bwd = tuple((float(a), float(b)) for a, b in self.backward)
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "backward", bwd)
        K = len(fwd) + 1
        if K < 2:
            raise ModelError("need at least two chain states")
        if len(bwd) != K - 1:
            raise ModelError("forward and backward coefficient lists must have equal length")
        if self.jumps.n_states != K:
            raise ModelError(f"jump intensities describe {self.jumps.n_states} states, generator has {K}")
        for name, val in (("rho", self.rho), ("T", self.T), ("w0", self.w0), ("L", self.L)):
            if not math.isfinite(val):
                raise ModelError(f"{name} must be finite")
        if self.rho < 0:
            raise ModelError("rho must be >= 0")
        if self.T <= 0 or self.w0 <= 0 or self.L <= 0:
            raise ModelError("T, w0 and L must be > 0")
        for kind, coeffs in (("forward", fwd), ("backward", bwd)):
            for i, (a, b) in enumerate(coeffs):
                if a < 0:
                    raise ModelError(f"{kind}[{i}]: intercept a={a} must be >= 0")
                # a -/+ b*h >= 0 on [-L, L]  <=>  |b| <= a / L
                if abs(b) * self.L > a * (1 + 1e-12):
                    raise ModelError(
                        f"{kind}[{i}]: |b| must not exceed a/L = {a / self.L:g} "
                        f"(got b={b}), otherwise the intensity turns negative on [-L, L]")
                if b < 0:
                    warnings.warn(
                        f"{kind}[{i}]: b={b} < 0 reverses the impact direction "
                        f"(expected b in (0, a/L))", stacklevel=3)
        hmax = self.h_max
        z = self.jumps.sizes
        if z.size and np.any(1 - hmax * np.abs(z) <= 0):
            raise ModelError(
                f"admissibility: 1 + h*z must stay > 0 for |h| <= {hmax:g}; "
                f"largest jump |z| = {np.abs(z).max():g}")
        if self.pi0 is None:
            object.__setattr__(self, "pi0", tuple([1.0 / K] * K))
        else:
            p = np.asarray(self.pi0, dtype=float)
            if p.shape != (K,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-10:
                raise ModelError(f"pi0 must be a probability vector of length {K}")
            object.__setattr__(self, "pi0", tuple(float(x) for x in p / p.sum()))

    @property
    def K(self) -> int:
        return len(self.forward) + 1

    @property
    def h_max(self) -> float:
        """Upper end of the effective control set [-L(1-delta), L(1-delta)]."""
        return self.L * (1 - CONTROL_MARGIN)

    def without_impact(self) -> "ModelParams":
        """Same model with the generator frozen at its h = 0 entries."""
        return replace(self,
                       forward=tuple((a, 0.0) for a, _ in self.forward),
                       backward=tuple((a, 0.0) for a, _ in self.backward))

    @property
    def has_impact(self) -> bool:
        return any(b != 0 for _, b in self.forward + self.backward)

    def _coeff_arrays(self):
        f = np.asarray(self.forward, dtype=float).reshape(-1, 2)
        b = np.asarray(self.backward, dtype=float).reshape(-1, 2)
        return f[:, 0], f[:, 1], b[:, 0], b[:, 1]

    def state_rate_coeffs(self):
        """Per-state affine exit rates: down_i(h) = da[i] - db[i]*h, up_i(h) = ua[i] + ub[i]*h."""
        af, bf, ab, bb = self._coeff_arrays()
        K = self.K
        da, db, ua, ub = (np.zeros(K) for _ in range(4))
        da[:-1], db[:-1] = af, bf
        ua[1:], ub[1:] = ab, bb
        return da, db, ua, ub

    def rates_out(self, h):
        """Intensities (up, down) of leaving each state, as arrays of shape h.shape + (K,).

        ``up[..., i]`` is q^{i,i-1}(h) (towards better) and ``down[..., i]`` is q^{i,i+1}(h);
        both are zero where the neighbour does not exist.
        """
        h = np.asarray(h, dtype=float)
        af, bf, ab, bb = self._coeff_arrays()
        hh = h[..., None]
        down = np.zeros(h.shape + (self.K,))
        up = np.zeros(h.shape + (self.K,))
        down[..., :-1] = af - bf * hh
        up[..., 1:] = ab + bb * hh
        return up, down

    def max_chain_rate(self) -> float:
        """Largest total chain exit rate over states and the effective control set."""
        up_lo, down_lo = self.rates_out(-self.h_max)
        up_hi, down_hi = self.rates_out(self.h_max)
        return float(np.max(np.maximum(up_lo, up_hi) + np.maximum(down_lo, down_hi)))

    def thinning_bound(self) -> float:
        """Dominating rate for chain transitions plus price jumps."""
        jumps = self.jumps.total().max() if self.jumps.n_atoms else 0.0
        return float(jumps) + self.max_chain_rate()


def check_control(params: ModelParams, h) -> None:
    h = np.asarray(h, dtype=float)
    if np.any(~np.isfinite(h)) or np.any(np.abs(h) > params.L):
        raise ValueError(f"control outside [-L, L] = [{-params.L}, {params.L}]")


def generator_matrix(params: ModelParams, h, t: float = 0.0) -> np.ndarray:
    """Generator Q(h) with next-neighbour affine intensities; batched over the shape of h."""
    check_control(params, h)
    up, down = params.rates_out(h)
    K = params.K
    h = np.asarray(h, dtype=float)
    Q = np.zeros(h.shape + (K, K))
    idx = np.arange(K - 1)
    Q[..., idx, idx + 1] = down[..., :-1]
    Q[..., idx + 1, idx] = up[..., 1:]
    Q[..., np.arange(K), np.arange(K)] = -(up + down)
    return Q


def wealth_after_jump(w, h, z):
    """Wealth right after a relative price jump z while holding fraction h."""
    factor = 1.0 + np.asarray(h, dtype=float) * np.asarray(z, dtype=float)
    if np.any(factor <= 0):
        raise AdmissibilityError(f"1 + h*z = {np.min(factor):g} <= 0")
    return w * factor


def utility_value(params: ModelParams, w):
    w = np.asarray(w, dtype=float)
    if np.any(~(w > 0)):
        raise ValueError("utility needs strictly positive wealth")
    out = params.utility(w)
    return float(out) if out.ndim == 0 else out


def reference_params(**overrides) -> ModelParams:
    """Two-state example: T=1, w=1, rho=0, jump 0.02, theta=0.5, a=5, b=0.1, L=50."""
    kw = dict(
        forward=((5.0, 0.1),),
        backward=((5.0, 0.1),),
        jumps=DiscreteCompensator.two_point(0.02, [10.0, 5.0], [5.0, 20.0]),
        rho=0.0,
        utility=PowerUtility(0.5),
        T=1.0,
        w0=1.0,
        L=50.0,
    )
    kw.update(overrides)
    return ModelParams(**kw)
