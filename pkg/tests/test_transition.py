import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ive

from brw_survival.kernel import (
    build_finite_variance_kernel,
    build_heavy_tail_kernel,
    fit_symbol_tail,
    nearest_neighbour_kernel,
)
from brw_survival.transition import (
    RECURRENT,
    TRANSIENT,
    PropagatorTable,
    classify_recurrence,
    critical_intensity,
    effective_classification,
    fit_green_divergence,
    green_function,
    rule_classification,
    solve_lambda0,
    transition_delta,
    transition_probability,
)


def green_simple_d1(lam, x):
    """G_lam(x, 0) for the rate-1 simple walk on Z."""
    a = 1.0 + lam
    root = math.sqrt(a * a - 1.0)
    return (a - root) ** abs(x) / root


@pytest.mark.parametrize("t", [0.1, 1.0, 7.5, 40.0])
@pytest.mark.parametrize("x", [0, 1, 3])
def test_simple_walk_bessel(t, x):
    assert transition_probability(nearest_neighbour_kernel(1), t, 0, x) == pytest.approx(
        float(ive(x, t)), abs=1e-10)


def test_two_dim_product_form():
    k = nearest_neighbour_kernel(2)
    t = 3.0
    for x in [(0, 0), (1, 0), (2, 1)]:
        ref = ive(x[0], t / 2) * ive(x[1], t / 2)
        assert transition_probability(k, t, (0, 0), x) == pytest.approx(float(ref), abs=1e-9)


def test_time_zero_and_errors():
    k = nearest_neighbour_kernel(1)
    assert transition_probability(k, 0.0, 0, 0) == 1.0
    assert transition_probability(k, 0.0, 0, 2) == 0.0
    with pytest.raises(ValueError):
        transition_probability(k, -1.0)
    with pytest.raises(ValueError):
        transition_probability(nearest_neighbour_kernel(2), 1.0, (0, 0), (1,))


def test_only_displacement_matters():
    k = build_finite_variance_kernel(2, {(1, 0): 0.3, (-1, 0): 0.3, (0, 1): 0.2, (0, -1): 0.2,
                                         (1, 1): 0.1, (-1, -1): 0.1})
    a = transition_probability(k, 2.0, (3, -1), (4, 1))
    b = transition_probability(k, 2.0, (0, 0), (1, 2))
    c = transition_probability(k, 2.0, (1, 2), (0, 0))
    assert a == pytest.approx(b, abs=1e-14)
    assert a == pytest.approx(c, abs=1e-12)


def test_normalisation_finite_support():
    k = build_heavy_tail_kernel(1, 1.2, R=5)
    t = 2.0
    total = sum(transition_probability(k, t, 0, x) for x in range(-80, 81))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_chapman_kolmogorov():
    k = nearest_neighbour_kernel(1)
    s, t = 1.3, 2.1
    lhs = transition_probability(k, s + t, 0, 0)
    rhs = sum(transition_probability(k, s, 0, z) * transition_probability(k, t, z, 0)
              for z in range(-40, 41))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_completed_kernel_normalisation():
    # infinite support: exact sum for |x| <= 200, a coarse Riemann sum out to
    # 4000, and the mass beyond 4000 (about 2e-5 at t = 1) is dropped
    k = build_heavy_tail_kernel(1, 1.5, R=64, tail="complete")
    total = sum(transition_probability(k, 1.0, 0, x) for x in range(-200, 201))
    far = 2 * sum(transition_probability(k, 1.0, 0, x) for x in range(201, 4001, 50)) * 50
    assert total + far == pytest.approx(1.0, abs=2e-3)


def test_delta_matches_difference_and_nonnegative():
    k = nearest_neighbour_kernel(1)
    for t in (0.5, 3.0, 20.0):
        for x in (1, 2, 5):
            d = transition_delta(k, t, x)
            assert d >= 0
            assert d == pytest.approx(float(ive(0, t) - ive(x, t)), abs=1e-10)
    assert transition_delta(k, 1.0, 0) == 0.0
    with pytest.raises(ValueError):
        transition_delta(k, 0.0, 1)


def test_delta_heavy_tail_nonnegative():
    k = build_heavy_tail_kernel(1, 1.5, R=64, tail="complete")
    vals = [transition_delta(k, t, x) for t in (1.0, 10.0, 100.0) for x in (1, 3)]
    assert min(vals) > 0


# ---------------------------------------------------------------------------


def test_propagator_panel_moments():
    k = nearest_neighbour_kernel(1)
    tab = PropagatorTable(k, 1, t_max=60.0)
    p = lambda v: float(ive(1, v))
    for A, h in [(0.0, 0.05), (0.5, 0.1), (5.0, 0.4), (30.0, 2.0)]:
        I0, J1 = tab.panel_moments(A, h)
        ref0 = quad(p, A, A + h, epsabs=1e-14)[0]
        ref1 = quad(lambda v: (v - A) * p(v), A, A + h, epsabs=1e-14)[0]
        assert I0[0] == pytest.approx(ref0, rel=1e-8, abs=1e-14)
        assert J1[0] == pytest.approx(ref1, rel=1e-8, abs=1e-14)
    with pytest.raises(ValueError):
        tab.p(61.0)


# ---------------------------------------------------------------------------


@pytest.mark.parametrize("lam", [0.05, 0.5, 2.0])
@pytest.mark.parametrize("x", [0, 1, 4])
def test_green_simple_d1_closed_form(lam, x):
    g = green_function(nearest_neighbour_kernel(1), lam, x)
    assert g.value == pytest.approx(green_simple_d1(lam, x), rel=1e-6)
    assert g.quad_error < 1e-6 * green_simple_d1(lam, 0)


def test_green_monotone_and_maximal_at_origin():
    k = nearest_neighbour_kernel(3)
    lams = [0.0, 0.01, 0.1, 1.0]
    g0 = [green_function(k, lam).value for lam in lams]
    assert all(a > b for a, b in zip(g0, g0[1:]))
    for x in [(1, 0, 0), (1, 1, 0), (2, 1, 1)]:
        assert green_function(k, 0.1, x).value < g0[2]


def test_green_divergence_marker():
    g = green_function(nearest_neighbour_kernel(2), 0.0)
    assert g.divergent and g.classification == RECURRENT
    with pytest.raises(ValueError):
        green_function(nearest_neighbour_kernel(1), -0.1)


@pytest.mark.parametrize("k, expected", [
    (nearest_neighbour_kernel(1), RECURRENT),
    (nearest_neighbour_kernel(2), RECURRENT),
    (nearest_neighbour_kernel(3), TRANSIENT),
    (build_heavy_tail_kernel(1, 1.5, R=64, tail="complete"), RECURRENT),
    (build_heavy_tail_kernel(1, 0.5, R=64, tail="complete"), TRANSIENT),
    (build_heavy_tail_kernel(1, 1.0, R=64, tail="complete"), RECURRENT),
    (build_heavy_tail_kernel(2, 1.5, R=6), TRANSIENT),
])
def test_rule_classification(k, expected):
    assert rule_classification(k) == expected


def test_probe_agrees_on_clear_cases():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert classify_recurrence(nearest_neighbour_kernel(1)) == RECURRENT
        assert classify_recurrence(nearest_neighbour_kernel(3)) == TRANSIENT


def test_truncated_transient_kernel_warns():
    k = build_heavy_tail_kernel(1, 0.5, R=16)
    assert effective_classification(k) == RECURRENT
    with pytest.warns(RuntimeWarning):
        assert classify_recurrence(k) == TRANSIENT
    with pytest.warns(RuntimeWarning):
        assert critical_intensity(k) == 0.0


def test_critical_intensity():
    assert critical_intensity(nearest_neighbour_kernel(1)) == 0.0
    assert critical_intensity(nearest_neighbour_kernel(3)) == pytest.approx(1 / 1.5163860591519784, rel=1e-6)


def test_lambda0_closed_form_and_root():
    k = nearest_neighbour_kernel(1)
    for beta in (0.3, 1.0, 4.0):
        lam = solve_lambda0(k, beta)
        assert green_simple_d1(lam, 0) == pytest.approx(1 / beta, rel=1e-10)
        assert 0 < lam <= beta
    with pytest.raises(ValueError):
        solve_lambda0(k, 0.0)
    with pytest.raises(ValueError):
        solve_lambda0(nearest_neighbour_kernel(3), 0.5)


def test_green_divergence_fit_simple_walk():
    fit = fit_green_divergence(nearest_neighbour_kernel(1))
    assert fit.exponent == 0.5
    assert fit.gamma == pytest.approx(1 / math.sqrt(2), rel=1e-3)


def test_delta_ratio_trend_heavy_tail():
    from brw_survival.transition import verify_delta_asymptotics
    k = build_heavy_tail_kernel(1, 1.5, R=64, tail="complete")
    fit = fit_symbol_tail(k, window=(1e-3, 1e-1))
    da = verify_delta_asymptotics(k, fit, 1, [1e2, 1e3, 1e4])
    assert da.converged(0.1)
    with pytest.raises(ValueError):
        verify_delta_asymptotics(k, fit, 0, [1.0])
    with pytest.raises(ValueError):
        verify_delta_asymptotics(k, fit, 1, [2.0, 1.0])
