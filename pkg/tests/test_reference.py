"""Full two-species model, quadrature propagator, and exhaustive search.

These are the independent reference implementations used to validate the
reduced model and the planner, so they are themselves tested against
first-principles properties (equilibria, conservation-style limits,
convergence order in the fertility scaling).
"""

import numpy as np
import pytest

from wolbplan import rates
from wolbplan.domain import build_grid, eval_K
from wolbplan.dynamics import propagate
from wolbplan.params import REF_PARAMS, theta
from wolbplan.planner import Budget
from wolbplan.reference import (
    ReductionConfig,
    brute_force_plan,
    cost_full,
    invasion_state,
    layer_exit_proportion,
    propagate_by_F,
    simulate_two_species,
)


def _grid_K(n=4, kind="constant"):
    g = build_grid(1, [1.0], n)
    return g, eval_K(kind, 100.0, g)


def test_reduction_config_validation():
    ReductionConfig(0.5)
    with pytest.raises(ValueError):
        ReductionConfig(0.0)
    with pytest.raises(ValueError):
        ReductionConfig(1.5)


def test_two_species_wild_equilibrium_is_steady():
    g, K = _grid_K()
    traj = simulate_two_species(np.zeros(4), K, g, 2.0, 1e-2, REF_PARAMS,
                                n_snapshots=5)
    wild = K.samples * (1.0 - REF_PARAMS.d1 * 1e-2 / REF_PARAMS.b1_0)
    np.testing.assert_allclose(traj.n1[-1], wild, rtol=1e-9)
    np.testing.assert_allclose(traj.n2[-1], 0.0, atol=1e-12)


def test_two_species_above_threshold_invades():
    g, K = _grid_K()
    eps = 1e-3
    u0 = np.full(4, 60.0)  # well above the invasion threshold
    traj = simulate_two_species(u0, K, g, 200.0, eps, REF_PARAMS, n_snapshots=3)
    n2_star = invasion_state(K, eps, REF_PARAMS)
    np.testing.assert_allclose(traj.n2[-1], n2_star, rtol=1e-6)
    np.testing.assert_allclose(traj.n1[-1], 0.0, atol=1e-6)
    assert traj.proportion[-1].min() > 1.0 - 1e-6


def test_two_species_below_threshold_dies_out():
    g, K = _grid_K()
    u0 = np.full(4, 5.0)  # too small a release
    traj = simulate_two_species(u0, K, g, 200.0, 1e-3, REF_PARAMS, n_snapshots=3)
    # extinction rate near zero is |f'(0)| = 0.057, so by T = 200 the
    # infected density has shrunk by roughly e^{-11.4}
    assert traj.n2[-1].max() < 1e-4
    assert traj.proportion[-1].max() < 1e-5
    wild = K.samples * (1.0 - REF_PARAMS.d1 * 1e-3 / REF_PARAMS.b1_0)
    np.testing.assert_allclose(traj.n1[-1], wild, rtol=1e-6)


def test_layer_exit_differs_from_slow_release_map():
    g, K = _grid_K(2)
    u0 = np.full(2, 100.0 * rates.G_antideriv(0.3, REF_PARAMS))
    exit_p = layer_exit_proportion(u0, K, REF_PARAMS)
    # the impulsive release loses more mosquitoes in the fast transient
    # than the quasi-static release map G assumes
    assert np.all(exit_p < 0.3)
    # with the wild type fitter at this proportion, the infected share
    # erodes as the total relaxes from K + u0 back down to K
    assert np.all(exit_p < u0 / (K.samples + u0))
    assert np.all(exit_p > 0.0)


def test_reduction_error_is_first_order_in_epsilon():
    g, K = _grid_K(2)
    u0 = np.full(2, 45.0)
    T = 3.0
    p_start = layer_exit_proportion(u0, K, REF_PARAMS)
    p_ref = propagate(p_start, T, REF_PARAMS).pT
    gaps = []
    for eps in (4e-3, 2e-3, 1e-3):
        traj = simulate_two_species(u0, K, g, T, eps, REF_PARAMS, n_snapshots=3)
        gaps.append(abs(traj.proportion[-1][0] - p_ref[0]))
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps) < 0.0)  # shrinks with epsilon
    ratios = gaps / np.array([4e-3, 2e-3, 1e-3])
    assert ratios.max() / ratios.min() < 2.0  # gap = O(epsilon)


def test_cost_full_zero_at_invasion_state():
    g, K = _grid_K()
    n2_star = invasion_state(K, 1e-3, REF_PARAMS)
    assert cost_full(np.zeros(4), n2_star, K, g, REF_PARAMS, 1e-3) == 0.0
    # overshoot beyond the target is not penalized
    assert cost_full(np.zeros(4), n2_star * 1.5, K, g, REF_PARAMS, 1e-3) == 0.0
    assert cost_full(K.samples, np.zeros(4), K, g, REF_PARAMS, 1e-3) > 0.0


def test_propagate_by_F_properties():
    th = theta(REF_PARAMS)
    # semigroup property on the quadrature oracle itself
    p1 = propagate_by_F(0.4, 1.0, REF_PARAMS)
    p2 = propagate_by_F(p1, 1.0, REF_PARAMS)
    assert propagate_by_F(0.4, 2.0, REF_PARAMS) == pytest.approx(p2, abs=1e-10)
    # monotone in p0 and ordered with respect to the threshold
    assert propagate_by_F(0.1, 5.0, REF_PARAMS) < 0.1 < th
    assert th < 0.4 < propagate_by_F(0.4, 5.0, REF_PARAMS)
    with pytest.raises(ValueError):
        propagate_by_F(th, 1.0, REF_PARAMS)
    with pytest.raises(ValueError):
        propagate_by_F(0.0, 1.0, REF_PARAMS)


def test_brute_force_plan_tiny_exact():
    # 2 cells, coarse levels: verify against a literal product-space scan
    g = build_grid(1, [1.0], 2)
    K = eval_K("two-patch", 100.0, g)
    b = Budget(C=20.0, M=250.0, T=1.0)
    cost_dp, p0_dp = brute_force_plan(K, g, b, 1.0, REF_PARAMS, levels=9)
    p_M = rates.G_inverse(np.minimum(250.0 / K.samples,
                                     rates.G_antideriv(1.0 - 1e-9, REF_PARAMS)),
                          REF_PARAMS)
    best = np.inf
    for i in range(9):
        for j in range(9):
            p0 = np.array([p_M[0] * i / 8.0, p_M[1] * j / 8.0])
            used = (K.samples * rates.G_antideriv(p0, REF_PARAMS)).sum() * g.cell_measure
            if used > 20.0 * (1.0 + 1e-12):
                continue
            pT = propagate(p0, 1.0, REF_PARAMS).pT
            cost = (K.samples**2 * (1.0 - pT) ** 2).sum() * g.cell_measure
            best = min(best, cost)
    assert cost_dp == pytest.approx(best, rel=1e-12)


def test_brute_force_plan_shuffle_invariant():
    # the sinusoidal landscape has pairwise-equal K cells, so distinct
    # search orders may return rearrangement-equivalent optima; the cost
    # and the per-landscape-value multiset of releases must agree
    g = build_grid(1, [1.0], 4)
    K = eval_K("sinusoidal", 100.0, g)
    b = Budget(C=30.0, M=250.0, T=1.0)
    c0, p0 = brute_force_plan(K, g, b, 1.0, REF_PARAMS, levels=9)
    for seed in (1, 123, 999):
        c1, p1 = brute_force_plan(K, g, b, 1.0, REF_PARAMS, levels=9,
                                  shuffle_seed=seed)
        assert c1 == pytest.approx(c0, rel=1e-12)
        for k in np.unique(np.round(K.samples, 9)):
            grp = np.isclose(K.samples, k)
            np.testing.assert_allclose(np.sort(p1[grp]), np.sort(p0[grp]),
                                       atol=1e-15)


def test_brute_force_plan_guards():
    g = build_grid(1, [1.0], 10)
    K = eval_K("constant", 100.0, g)
    with pytest.raises(ValueError):
        brute_force_plan(K, g, Budget(C=30.0, M=250.0, T=1.0), 1.0, REF_PARAMS)
