import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from regime_impact.filtering import ImpossibleObservation, bayes_update, filter_drift, propagate
from regime_impact.model import DiscreteCompensator, ModelParams, reference_params
from regime_impact.simulator import PARTIAL, ConstantPolicy, simulate_path


def test_drift_reference_example(base):
    d = filter_drift(base, np.array([0.5, 0.5]), 0.0)
    assert d[0] == pytest.approx(2.5, abs=1e-14)
    assert d.sum() == pytest.approx(0.0, abs=1e-14)


def test_identical_intensities_have_no_observation_drift():
    p = reference_params(jumps=DiscreteCompensator.two_point(0.02, [8.0, 8.0], [6.0, 6.0]))
    pi = np.array([0.3, 0.7])
    # only the chain part remains: -q12 pi1 + q21 pi2
    assert filter_drift(p, pi, 0.0)[0] == pytest.approx(-5 * 0.3 + 5 * 0.7, abs=1e-14)


@settings(max_examples=300, deadline=None)
@given(p1=st.floats(0, 1), h=st.floats(-49.95, 49.95))
def test_drift_is_tangent_to_simplex(p1, h):
    p = reference_params()
    assert abs(filter_drift(p, np.array([p1, 1 - p1]), h).sum()) < 1e-12


def test_drift_matches_generator_form():
    # component i = sum_j q_ji pi_j - pi_i (lam_i - lam_bar), three states
    p = ModelParams(forward=((2.0, 0.01), (3.0, 0.02)), backward=((1.0, 0.01), (4.0, 0.03)),
                    jumps=DiscreteCompensator([0.05, -0.03], [[3.0, 1.0], [2.0, 2.0], [0.5, 6.0]]), L=10.0)
    from regime_impact.model import generator_matrix
    pi = np.array([0.2, 0.5, 0.3])
    h = 4.0
    Q = generator_matrix(p, h)
    lam = p.jumps.total()
    expected = pi @ Q - pi * (lam - pi @ lam)
    np.testing.assert_allclose(filter_drift(p, pi, h), expected, atol=1e-14)


def test_bayes_update_examples(base):
    np.testing.assert_allclose(bayes_update(base, np.array([0.5, 0.5]), 0), [2 / 3, 1 / 3], rtol=1e-15)
    np.testing.assert_array_equal(bayes_update(base, np.array([1.0, 0.0]), 1), [1.0, 0.0])
    flat = reference_params(jumps=DiscreteCompensator.two_point(0.02, [7.0, 7.0], [1.0, 2.0]))
    np.testing.assert_allclose(bayes_update(flat, np.array([0.37, 0.63]), 0), [0.37, 0.63], rtol=1e-15)


def test_bayes_update_impossible_observation():
    p = reference_params(jumps=DiscreteCompensator.two_point(0.02, [5.0, 0.0], [5.0, 5.0]))
    with pytest.raises(ImpossibleObservation):
        bayes_update(p, np.array([0.0, 1.0]), 0)


@settings(max_examples=200, deadline=None)
@given(p1=st.floats(0, 1), m=st.integers(0, 1))
def test_bayes_update_brute_force(p1, m):
    p = reference_params()
    lam = p.jumps.intensities[:, m]
    joint = np.array([p1 * lam[0], (1 - p1) * lam[1]])
    np.testing.assert_allclose(bayes_update(p, np.array([p1, 1 - p1]), m), joint / joint.sum(), atol=1e-15)


def test_propagate_zero_interval(base):
    pi = np.array([0.3, 0.7])
    np.testing.assert_array_equal(propagate(base, pi, 0.0, 0.4, 0.4), pi)


def euler_oracle(params, pi, h, t1, step=1e-6):
    n = int(round(t1 / step))
    for _ in range(n):
        pi = pi + step * filter_drift(params, pi, h)
    return pi


def test_propagate_against_fine_euler(base):
    got = propagate(base, np.array([0.5, 0.5]), 0.0, 0.0, 0.01)
    ref = euler_oracle(base, np.array([0.5, 0.5]), 0.0, 0.01)
    assert got[0] == pytest.approx(0.525, abs=2e-3)
    # explicit Euler at step 1e-6 is itself only accurate to ~1e-7 here
    assert abs(got[0] - ref[0]) < 1e-6


def test_propagate_time_dependent_control_against_euler(base):
    h_of_t = lambda t: 30.0 * math.sin(20 * t)  # noqa: E731
    got = propagate(base, np.array([0.2, 0.8]), h_of_t, 0.0, 0.05)
    pi = np.array([0.2, 0.8])
    step = 1e-6
    for k in range(50_000):
        pi = pi + step * filter_drift(base, pi, h_of_t(k * step))
    assert abs(got[0] - pi[0]) < 1e-6


def test_stationary_point_is_fixed(base):
    root = brentq(lambda x: filter_drift(base, np.array([x, 1 - x]), 0.0)[0], 0.0, 1.0, xtol=1e-15)
    assert root == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    out = propagate(base, np.array([root, 1 - root]), 0.0, 0.0, base.T)
    assert abs(out[0] - root) < 1e-8


def test_simplex_preservation_batch(rng):
    """10^4 random (pi, h, dt) propagations across K = 2, 3, 4, with jumps in between."""
    count = 0
    for K in (2, 3, 4):
        a = rng.uniform(0.5, 20.0, size=2 * (K - 1))
        L = 30.0
        frac = rng.uniform(0.0, 1.0, size=2 * (K - 1))
        fwd = tuple((a[i], frac[i] * a[i] / L) for i in range(K - 1))
        bwd = tuple((a[K - 1 + i], frac[K - 1 + i] * a[K - 1 + i] / L) for i in range(K - 1))
        lam = rng.uniform(0.0, 40.0, size=(K, 2))
        lam[0] += 0.1
        p = ModelParams(forward=fwd, backward=bwd, jumps=DiscreteCompensator([0.03, -0.03], lam), L=L)
        for _ in range(12):
            n = 280
            pi = rng.dirichlet(np.full(K, 0.3), size=n)
            h = rng.uniform(-p.h_max, p.h_max, size=n)
            dt = rng.uniform(0.0, 0.2)
            out = propagate(p, pi, h, 0.0, dt)
            out = bayes_update(p, out, int(rng.integers(2))) if np.all(out @ p.jumps.intensities > 0) else out
            out = propagate(p, out, h, dt, dt + rng.uniform(0.0, 0.05))
            assert np.all(out >= 0)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-10)
            count += n
    assert count >= 10_000


@settings(max_examples=200, deadline=None)
@given(p1=st.floats(0, 1), h=st.floats(-49.95, 49.95), dt=st.floats(0, 0.5))
def test_simplex_preservation_property(p1, h, dt):
    p = reference_params()
    out = propagate(p, np.array([p1, 1 - p1]), h, 0.0, dt)
    assert np.all(out >= 0) and abs(out.sum() - 1) < 1e-10


def likelihood_weighted_filter(params, h, events, T, n_paths, dt, rng):
    """P(Y_T = e_1 | observed jumps) by weighting simulated chain paths with the jump likelihood.

    Chain paths are drawn from the h-controlled generator on a coarse grid; each path
    gets weight prod lambda_{Y(tau), m} * exp(-int lambda_tot(Y) dt). Returns the weighted
    frequency and its delta-method standard error.
    """
    lam = np.asarray(params.jumps.intensities)
    lam_tot = lam.sum(axis=1)
    up, down = params.rates_out(h)
    n_steps = int(round(T / dt))
    y = (rng.random(n_paths) >= params.pi0[0]).astype(int)
    logw = np.zeros(n_paths)
    ev = sorted(events)
    k = 0
    for s in range(n_steps):
        t_end = (s + 1) * dt
        # observed jumps inside this bin are charged to the state at the bin start
        while k < len(ev) and ev[k][0] <= t_end:
            logw += np.log(lam[y, ev[k][1]])
            k += 1
        logw -= lam_tot[y] * dt
        leave = np.where(y == 0, down[0], up[1]) * dt
        flip = rng.random(n_paths) < leave
        y = np.where(flip, 1 - y, y)
    w = np.exp(logw - logw.max())
    x = (y == 0).astype(float)
    est = np.sum(w * x) / np.sum(w)
    se = math.sqrt(np.sum(w**2 * (x - est) ** 2)) / np.sum(w)
    return est, se


def test_filter_matches_likelihood_weighted_conditioning(base):
    h = 15.0
    T = 0.3
    params = reference_params(T=T)
    path = simulate_path(params, ConstantPolicy(h), PARTIAL, seed=11, report_stride=1000)
    jumps = [(t, m) for t, kind, m in path.events if kind == "jump"]
    assert len(jumps) >= 2
    est, se = likelihood_weighted_filter(params, h, jumps, T, 100_000, 1e-3, np.random.default_rng(5))
    filt = path.filter_path[-1][0]
    # 3 SE plus the O(dt) bias of the coarse chain bins
    assert abs(filt - est) <= 3 * se + 5e-3, (filt, est, se)
