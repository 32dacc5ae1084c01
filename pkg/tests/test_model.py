import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regime_impact.model import (AdmissibilityError, DiscreteCompensator, LogUtility, ModelError, ModelParams,
                                 PowerUtility, generator_matrix, reference_params, utility_value, wealth_after_jump)


def random_params(draw_a, draw_frac, K, L):
    fwd = tuple((a, f * a / L) for a, f in zip(draw_a[:K - 1], draw_frac[:K - 1]))
    bwd = tuple((a, f * a / L) for a, f in zip(draw_a[K - 1:], draw_frac[K - 1:]))
    jumps = DiscreteCompensator.two_point(0.01, np.ones(K), np.ones(K))
    return ModelParams(forward=fwd, backward=bwd, jumps=jumps, L=L)


@st.composite
def params_and_control(draw):
    K = draw(st.integers(2, 5))
    L = draw(st.floats(1.0, 90.0))
    a = draw(st.lists(st.floats(0.0, 50.0), min_size=2 * (K - 1), max_size=2 * (K - 1)))
    frac = draw(st.lists(st.floats(0.0, 1.0), min_size=2 * (K - 1), max_size=2 * (K - 1)))
    p = random_params(a, frac, K, L)
    h = draw(st.floats(-L, L))
    return p, h


def test_generator_reference_example(base):
    np.testing.assert_array_equal(generator_matrix(base, 0.0), [[-5.0, 5.0], [5.0, -5.0]])


def test_generator_at_upper_bound(base):
    Q = generator_matrix(base, 50.0)
    assert Q[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert Q[1, 0] == pytest.approx(10.0)


@settings(max_examples=1000, deadline=None)
@given(params_and_control())
def test_generator_rows_sum_to_zero_and_offdiagonal_nonnegative(pc):
    p, h = pc
    Q = generator_matrix(p, h)
    np.testing.assert_allclose(Q.sum(axis=1), 0.0, atol=1e-12)
    off = Q[~np.eye(p.K, dtype=bool)]
    assert np.all(off >= -1e-12)
    # only next neighbours
    i, j = np.nonzero(np.abs(np.subtract.outer(np.arange(p.K), np.arange(p.K))) > 1)
    assert np.all(Q[i, j] == 0)


def test_generator_batched_matches_loop(base):
    hs = np.linspace(-50, 50, 7)
    Qb = generator_matrix(base, hs)
    for k, h in enumerate(hs):
        np.testing.assert_array_equal(Qb[k], generator_matrix(base, h))


def test_generator_rejects_control_outside_bounds(base):
    with pytest.raises(ValueError):
        generator_matrix(base, 50.5)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.1, 20.0), excess=st.floats(1e-6, 5.0), L=st.floats(1.0, 100.0), sign=st.sampled_from([1, -1]))
def test_constructor_rejects_negative_intensity_coefficients(a, excess, L, sign):
    b = sign * (a / L) * (1 + excess)
    with pytest.raises(ModelError, match="a/L"):
        ModelParams(forward=((a, b),), backward=((a, 0.0),),
                    jumps=DiscreteCompensator.two_point(0.001, [1, 1], [1, 1]), L=L)


def test_b1_equal_to_02_names_constraint():
    with pytest.raises(ModelError, match=r"a/L = 0\.1"):
        reference_params(forward=((5.0, 0.2),))


def test_negative_b_warns():
    with pytest.warns(UserWarning, match="reverses"):
        reference_params(forward=((5.0, -0.1),))


def test_admissibility_on_effective_set():
    with pytest.raises(ModelError, match="admissibility"):
        reference_params(jumps=DiscreteCompensator.two_point(0.05, [1, 1], [1, 1]))
    # L = 1/jump is fine thanks to the margin
    p = reference_params()
    assert np.all(1 + p.h_max * np.abs(p.jumps.sizes) * np.array([1, -1])[:, None] > 0)


def test_compensator_validation():
    with pytest.raises(ModelError):
        DiscreteCompensator([0.1], [[-1.0], [1.0]])
    with pytest.raises(ModelError):
        DiscreteCompensator([0.1, -0.1], [[0.0, 1.0], [0.0, 2.0]])  # atom 0 never fires
    with pytest.raises(ModelError):
        DiscreteCompensator([-1.0], [[1.0], [1.0]])
    empty = DiscreteCompensator([], np.zeros((2, 0)))
    assert empty.n_atoms == 0 and empty.n_states == 2


def test_compensator_mixed_rates(base):
    np.testing.assert_allclose(base.jumps.mixed([0.5, 0.5]), [7.5, 12.5])
    np.testing.assert_allclose(base.jumps.total(), [15.0, 25.0])


@pytest.mark.parametrize("w,h,z,expected", [(1, 0, 0.02, 1.0), (1, 10, 0.02, 1.2), (2, -30, -0.02, 3.2)])
def test_wealth_after_jump(w, h, z, expected):
    assert wealth_after_jump(w, h, z) == pytest.approx(expected, rel=1e-15)


def test_wealth_after_jump_rejects_ruin():
    with pytest.raises(AdmissibilityError):
        wealth_after_jump(1.0, 50.0, -0.02)


@settings(max_examples=300, deadline=None)
@given(w=st.floats(1e-6, 1e6), u=st.floats(-1.0, 1.0), z=st.floats(-0.5, 0.5).filter(lambda x: abs(x) > 1e-9))
def test_wealth_stays_positive_under_admissible_inputs(w, u, z):
    h = u * (1 - 1e-3) / abs(z)
    assert wealth_after_jump(w, h, z) > 0


@pytest.mark.parametrize("util,w,expected", [(LogUtility(), 1.0, 0.0), (PowerUtility(0.5), 1.0, 2.0),
                                             (PowerUtility(0.5), 4.0, 4.0)])
def test_utility_values(util, w, expected):
    p = reference_params(utility=util)
    assert utility_value(p, w) == pytest.approx(expected, abs=1e-15)


def test_utility_rejects_nonpositive_wealth(base):
    with pytest.raises(ValueError):
        utility_value(base, 0.0)


def test_power_utility_parameter_range():
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ModelError):
            PowerUtility(bad)
    PowerUtility(-2.0)


def test_params_immutable_and_pi0_default(base):
    assert base.pi0 == (0.5, 0.5)
    with pytest.raises(Exception):
        base.rho = 1.0
    with pytest.raises(ValueError):
        base.jumps.intensities[0, 0] = 3.0


def test_without_impact_keeps_intercepts(base):
    p0 = base.without_impact()
    assert p0.forward == ((5.0, 0.0),) and not p0.has_impact and base.has_impact


def test_thinning_bound_dominates(base):
    hs = np.linspace(-base.h_max, base.h_max, 101)
    up, down = base.rates_out(hs)
    total = up + down + base.jumps.total()
    assert total.max() <= base.thinning_bound() + 1e-12


def test_no_warnings_for_reference_params():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        reference_params()
