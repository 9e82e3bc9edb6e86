"""Scalar flow, sensitivities, switch function, and the flow table.

Cross-validation routes: the time-T map against the quadrature/bisection
propagator (independent of the RK4 kernel), sensitivities against central
finite differences, and the identity d(ln S)/dp0 = a for the accumulated
curvature integral.
"""

import numpy as np
import pytest

from wolbplan.dynamics import (
    A_function,
    FlowTable,
    check_hypothesis_H,
    propagate,
    switch_w,
    w_inverse_increasing,
    w_minimizer,
)
from wolbplan.params import REF_PARAMS, compute_T0, derived_thresholds, theta
from wolbplan.reference import propagate_by_F

THETA = theta(REF_PARAMS)
THETA_BAR = derived_thresholds(REF_PARAMS).theta_bar


def test_time_zero_is_identity():
    res = propagate(0.37, 0.0, REF_PARAMS)
    assert res.pT == 0.37 and res.sensitivity == 1.0 and res.a_integral == 0.0


def test_fixed_points_are_frozen():
    res = propagate(np.array([0.0, THETA, 1.0]), 10.0, REF_PARAMS)
    np.testing.assert_allclose(res.pT, [0.0, THETA, 1.0], atol=1e-14)


def test_bistable_basins():
    res = propagate(np.array([0.05, 0.5]), 200.0, REF_PARAMS)
    assert res.pT[0] < 1e-6  # below threshold: extinction
    assert res.pT[1] > 1.0 - 1e-6  # above threshold: invasion


def test_propagate_matches_quadrature_oracle():
    rng = np.random.default_rng(7)
    for _ in range(8):
        p0 = float(rng.uniform(0.02, 0.95))
        if min(abs(p0 - THETA), p0, 1.0 - p0) < 5e-3:
            continue
        T = float(rng.uniform(0.3, 6.0))
        assert propagate(p0, T, REF_PARAMS).pT == pytest.approx(
            propagate_by_F(p0, T, REF_PARAMS), abs=1e-9)


def test_sensitivity_matches_finite_differences():
    h = 1e-6
    for p0, T in [(0.1, 1.0), (0.3, 2.0), (0.6, 1.5), (0.15, 25.0)]:
        res = propagate(p0, T, REF_PARAMS)
        fd = (propagate(p0 + h, T, REF_PARAMS).pT
              - propagate(p0 - h, T, REF_PARAMS).pT) / (2.0 * h)
        assert res.sensitivity == pytest.approx(fd, rel=2e-5)


def test_a_integral_is_log_derivative_of_sensitivity():
    h = 1e-6
    for p0, T in [(0.1, 1.0), (0.3, 3.0), (0.12, 10.0)]:
        res = propagate(p0, T, REF_PARAMS)
        s_p = propagate(p0 + h, T, REF_PARAMS).sensitivity
        s_m = propagate(p0 - h, T, REF_PARAMS).sensitivity
        fd = (np.log(s_p) - np.log(s_m)) / (2.0 * h)
        assert res.a_integral == pytest.approx(fd, rel=5e-5, abs=1e-7)


def test_switch_function_sign_and_short_horizon_monotonicity():
    grid = np.linspace(0.0, 0.999, 400)
    w = switch_w(grid, 1.0, REF_PARAMS)
    assert np.all(w[:-1] < 0.0)  # strictly negative on [0, 1)
    assert np.all(np.diff(w) > 0.0)  # increasing below the regime threshold
    assert abs(switch_w(1.0, 1.0, REF_PARAMS)) < 1e-14


def test_switch_function_long_horizon_has_interior_minimum():
    T = 25.0
    p0T = w_minimizer(T, REF_PARAMS)
    assert 0.0 < p0T < THETA_BAR
    assert A_function(p0T, T, REF_PARAMS) == pytest.approx(0.0, abs=1e-9)
    # genuine minimum: w rises on both sides
    w_at = switch_w(p0T, T, REF_PARAMS)
    assert switch_w(p0T - 0.02, T, REF_PARAMS) > w_at
    assert switch_w(p0T + 0.02, T, REF_PARAMS) > w_at
    with pytest.raises(ValueError):
        w_minimizer(1.0, REF_PARAMS)


def test_dw_dp0_equals_w_times_A():
    h = 1e-6
    for p0, T in [(0.1, 1.0), (0.3, 25.0), (0.5, 2.0)]:
        fd = (switch_w(p0 + h, T, REF_PARAMS) - switch_w(p0 - h, T, REF_PARAMS)) / (2.0 * h)
        wa = switch_w(p0, T, REF_PARAMS) * A_function(p0, T, REF_PARAMS)
        assert fd == pytest.approx(wa, rel=5e-5, abs=1e-9)


def test_hypothesis_H_reference_set():
    for T in (1.0, 25.0):
        rep = check_hypothesis_H(REF_PARAMS, T, n_grid=500, n_steps=500)
        assert rep["holds"], f"T={T}: {rep['sign_changes']} sign changes"
    with pytest.raises(ValueError):
        check_hypothesis_H(REF_PARAMS, 1.0, n_grid=10)


def test_w_inverse_roundtrip():
    target = float(switch_w(0.4, 1.0, REF_PARAMS))
    p0 = w_inverse_increasing(target, 1.0, REF_PARAMS, (0.0, 0.9))
    assert p0 == pytest.approx(0.4, abs=1e-10)
    with pytest.raises(ValueError):
        w_inverse_increasing(-100.0, 1.0, REF_PARAMS, (0.0, 0.9))


@pytest.mark.parametrize("T", [1.0, 25.0])
def test_flow_table_matches_exact_flow(T):
    table = FlowTable(REF_PARAMS, T)
    rng = np.random.default_rng(11)
    p0 = rng.uniform(0.01, 0.95, 40)
    exact = propagate(p0, T, REF_PARAMS)
    np.testing.assert_allclose(table.pT(p0), exact.pT, atol=5e-8)
    np.testing.assert_allclose(table.w(p0), switch_w(p0, T, REF_PARAMS),
                               atol=5e-7)
    # branch inverse: w(w_inverse(y)) = y on the increasing branch
    start = table.p0T if table.p0T is not None else 0.0
    targets = np.linspace(table.w_min + 1e-6, table.w_grid[-2], 15)
    back = table.w_inverse(targets)
    assert np.all(back >= start - 1e-12)
    np.testing.assert_allclose(switch_w(back, T, REF_PARAMS), targets, atol=1e-6)


def test_flow_table_regime_fields():
    t1 = FlowTable(REF_PARAMS, 1.0)
    assert t1.p0T is None and t1.w_min == t1.w0
    t25 = FlowTable(REF_PARAMS, 25.0)
    assert t25.p0T is not None and t25.w_min < t25.w0 < 0.0
    assert compute_T0(REF_PARAMS) == pytest.approx(t25.T0)
