"""Independent reference models used to validate the reduced planner.

Three oracles live here: the full two-species competition ODE (whose
fast-fertility limit is the scalar proportion model), a quadrature-based
propagator built from the antiderivative of 1/f, and an exhaustive
enumeration planner for tiny grids.  None of them share code with the
production solvers, so agreement is meaningful evidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.integrate import quad
from scipy.optimize import brentq

from . import rates
from .domain import CarryingCapacity, Grid
from .params import BioParams, theta


@dataclass(frozen=True)
class ReductionConfig:
    """Fertility scaling: birth rates are b_i = b_i^0 / epsilon."""

    epsilon: float

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError("epsilon must lie in (0, 1]")


@dataclass
class TwoSpeciesTrajectory:
    times: np.ndarray  # (n_snapshots,)
    n1: np.ndarray  # (n_snapshots, n_cells)
    n2: np.ndarray  # (n_snapshots, n_cells)

    @property
    def proportion(self) -> np.ndarray:
        total = self.n1 + self.n2
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(total > 0.0, self.n2 / total, 0.0)


@njit(cache=True)
def _two_species_kernel(n1_0, n2_0, K, T, dt, b1, b2, d1, d2, sh, snap_every):
    n_cells = n1_0.shape[0]
    n_steps = int(np.ceil(T / dt - 1e-12))
    n_snap = n_steps // snap_every + 1
    n1_out = np.empty((n_snap, n_cells))
    n2_out = np.empty((n_snap, n_cells))
    t_out = np.empty(n_snap)
    ok = True
    for i in range(n_cells):
        n1 = n1_0[i]
        n2 = n2_0[i]
        Ki = K[i]
        n1_out[0, i] = n1
        n2_out[0, i] = n2
        snap = 1
        for step in range(n_steps):
            h = dt if (step + 1) * dt <= T else T - step * dt
            a1 = n1
            a2 = n2
            k1_1 = k1_2 = k2_1 = k2_2 = k3_1 = k3_2 = k4_1 = k4_2 = 0.0
            for s in range(4):
                tot = a1 + a2
                crowd = 1.0 - tot / Ki
                ci = 1.0 - (sh * a2 / tot if tot > 0.0 else 0.0)
                r1 = b1 * a1 * crowd * ci - d1 * a1
                r2 = b2 * a2 * crowd - d2 * a2
                if s == 0:
                    k1_1, k1_2 = r1, r2
                    a1 = n1 + 0.5 * h * r1
                    a2 = n2 + 0.5 * h * r2
                elif s == 1:
                    k2_1, k2_2 = r1, r2
                    a1 = n1 + 0.5 * h * r1
                    a2 = n2 + 0.5 * h * r2
                elif s == 2:
                    k3_1, k3_2 = r1, r2
                    a1 = n1 + h * r1
                    a2 = n2 + h * r2
                else:
                    k4_1, k4_2 = r1, r2
            n1 = n1 + h / 6.0 * (k1_1 + 2.0 * k2_1 + 2.0 * k3_1 + k4_1)
            n2 = n2 + h / 6.0 * (k1_2 + 2.0 * k2_2 + 2.0 * k3_2 + k4_2)
            if n1 < -1e-9 or n2 < -1e-9 or not (np.isfinite(n1) and np.isfinite(n2)):
                ok = False
                break
            if n1 < 0.0:
                n1 = 0.0
            if n2 < 0.0:
                n2 = 0.0
            if (step + 1) % snap_every == 0 and snap < n_snap:
                n1_out[snap, i] = n1
                n2_out[snap, i] = n2
                if i == 0:
                    t_out[snap] = (step + 1) * dt
                snap = snap + 1
        if not ok:
            break
        # ensure the final snapshot is the terminal state
        n1_out[n_snap - 1, i] = n1
        n2_out[n_snap - 1, i] = n2
    t_out[0] = 0.0
    t_out[n_snap - 1] = T
    return t_out, n1_out, n2_out, ok


def simulate_two_species(u0, K: CarryingCapacity, grid: Grid, T: float,
                         epsilon: float, params: BioParams,
                         n_snapshots: int = 101) -> TwoSpeciesTrajectory:
    """Integrate the per-cell wild/infected competition ODEs.

    Birth rates are b_i^0/epsilon; the release is impulsive, realized as
    the state jump n2(0+) = u0 on top of the wild equilibrium
    n1(0) = K (1 - d1/b1).  Fixed-step RK4 with dt = epsilon/100, which
    resolves the O(1/epsilon) relaxation of the total population.
    """
    ReductionConfig(epsilon)
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 < 0.0):
        raise ValueError("release field must be nonnegative")
    b1 = params.b1_0 / epsilon
    b2 = params.b2_0 / epsilon
    n1_0 = K.samples * (1.0 - params.d1 / b1)
    n2_0 = u0.copy()
    dt = epsilon / 100.0
    n_steps = int(np.ceil(T / dt - 1e-12))
    snap_every = max(1, n_steps // max(1, n_snapshots - 1))
    times, n1, n2, ok = _two_species_kernel(
        n1_0, n2_0, K.samples.astype(float), T, dt,
        b1, b2, params.d1, params.d2, params.s_h, snap_every,
    )
    if not ok:
        raise RuntimeError(
            f"two-species integration lost positivity/finiteness at dt={dt}; "
            "decrease dt (it must scale with epsilon)"
        )
    return TwoSpeciesTrajectory(times=times, n1=n1, n2=n2)


def invasion_state(K: CarryingCapacity, epsilon: float, params: BioParams) -> np.ndarray:
    """Infected-only steady state n2* = K (1 - d2/b2) with b2 = b2^0/epsilon."""
    return K.samples * (1.0 - params.d2 * epsilon / params.b2_0)


def layer_exit_proportion(u0, K: CarryingCapacity, params: BioParams) -> np.ndarray:
    """Proportion reached after the fast post-release transient of a state jump.

    An instantaneous jump n2(0+) = u0 pushes the total population above K;
    during the O(epsilon) relaxation back to the carrying capacity the
    proportion follows dp/dN = p(1-p)(b2^0 - b1^0(1-s_h p)) /
    (N [b1^0(1-p)(1-s_h p) + b2^0 p]) (death terms are negligible on the
    fast scale).  The exit value is the correct initial proportion for the
    reduced scalar flow when the release is realized as a state jump; it
    differs from G^{-1}(u0/K) by an O(1) amount, because the latter assumes
    the release is slow relative to the population relaxation.
    """
    from scipy.integrate import solve_ivp

    b1, b2, sh = params.b1_0, params.b2_0, params.s_h
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    out = np.empty_like(u0)
    for i, (u, k) in enumerate(zip(u0, K.samples)):
        if u <= 0.0:
            out[i] = 0.0
            continue

        def rhs(N, p):
            p = p[0]
            num = p * (1.0 - p) * (b2 - b1 * (1.0 - sh * p))
            den = N * (b1 * (1.0 - p) * (1.0 - sh * p) + b2 * p)
            return [num / den]

        sol = solve_ivp(rhs, [k + u, k], [u / (k + u)], rtol=1e-12, atol=1e-14)
        out[i] = sol.y[0, -1]
    return out


def cost_full(n1_T, n2_T, K: CarryingCapacity, grid: Grid, params: BioParams,
              epsilon: float) -> float:
    """Least-squares distance to the infected-invasion steady state."""
    n2_star = invasion_state(K, epsilon, params)
    short = np.maximum(n2_star - np.asarray(n2_T), 0.0)
    return float(
        0.5 * (np.asarray(n1_T) ** 2 + short**2).sum() * grid.cell_measure
    )


def propagate_by_F(p0: float, T: float, params: BioParams) -> float:
    """Quadrature oracle for the scalar flow: solves int_{p0}^{pT} dq/f(q) = T.

    The time-to-state function is built by adaptive quadrature on the
    monotone branch containing p0 and inverted by root bracketing; valid
    only away from the equilibria where 1/f is singular.
    """
    th = theta(params)
    if min(abs(p0), abs(p0 - th), abs(p0 - 1.0)) < 1e-9:
        raise ValueError("p0 too close to an equilibrium; 1/f is singular there")
    if not (0.0 < p0 < 1.0):
        raise ValueError("p0 must lie in (0, 1)")

    def inv_f(q):
        return 1.0 / rates.f_rate(q, params)

    def elapsed(q):
        val, _ = quad(inv_f, p0, q, epsabs=1e-13, epsrel=1e-13, limit=400)
        return val

    if p0 > th:
        # increasing branch toward 1
        hi = p0
        for k in range(1, 200):
            hi = 1.0 - (1.0 - p0) * 0.5**k
            if elapsed(hi) >= T:
                break
        else:
            return 1.0
        return brentq(lambda q: elapsed(q) - T, p0, hi, xtol=1e-15, rtol=8.9e-16)
    # decreasing branch toward 0
    lo = p0
    for k in range(1, 200):
        lo = p0 * 0.5**k
        if elapsed(lo) >= T:
            break
    else:
        return 0.0
    return brentq(lambda q: elapsed(q) - T, lo, p0, xtol=1e-15, rtol=8.9e-16)


def brute_force_plan(K: CarryingCapacity, grid: Grid, budget, T: float,
                     params: BioParams, levels: int = 21,
                     shuffle_seed: int | None = None):
    """Exhaustive minimum of the terminal cost over a per-cell level grid.

    Each cell independently takes p0 in {0, p_M/(levels-1), ..., p_M}; all
    combinations with total release within the budget are covered.  The
    search runs as an exact dynamic program over partial (budget, cost)
    sums with dominance pruning, which visits the same feasible set as the
    levels^cells product without materializing it.
    """
    from .dynamics import propagate

    n = grid.n_cells
    if n > 8:
        raise ValueError("brute-force oracle is limited to 8 cells")
    if levels > 21:
        raise ValueError("brute-force oracle is limited to 21 levels")
    if levels**n > 1e9:
        raise ValueError("search space exceeds 1e9 combinations")

    p_M = rates.G_inverse(np.minimum(budget.M / K.samples,
                                     rates.G_antideriv(1.0 - 1e-9, params)), params)
    p_M = np.atleast_1d(p_M)
    # per-cell option tables: budget use and terminal cost for every level
    opt_b = np.empty((n, levels))
    opt_c = np.empty((n, levels))
    opt_p = np.empty((n, levels))
    for i in range(n):
        ps = np.linspace(0.0, p_M[i], levels)
        pT = propagate(ps, T, params).pT
        opt_p[i] = ps
        opt_b[i] = K.samples[i] * rates.G_antideriv(ps, params) * grid.cell_measure
        opt_c[i] = K.samples[i] ** 2 * (1.0 - pT) ** 2 * grid.cell_measure

    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)

    # states: (budget_used, cost_so_far, choice tuple); prune dominated ones
    states = [(0.0, 0.0, ())]
    for i in order:
        nxt = []
        for b, c, sel in states:
            for lv in range(levels):
                nb = b + opt_b[i, lv]
                if nb > budget.C * (1.0 + 1e-12):
                    break  # levels are sorted by increasing budget use
                nxt.append((nb, c + opt_c[i, lv], sel + (lv,)))
        nxt.sort()
        pruned = []
        best_c = np.inf
        for b, c, sel in nxt:
            if c < best_c - 1e-15:
                pruned.append((b, c, sel))
                best_c = c
        states = pruned

    best = min(states, key=lambda s: s[1])
    choice = np.empty(n, dtype=int)
    for pos, i in enumerate(order):
        choice[i] = best[2][pos]
    p0 = np.array([opt_p[i, choice[i]] for i in range(n)])
    # re-sum in canonical cell order so the result is independent of the
    # enumeration order down to the last bit
    cost = float(sum(opt_c[i, choice[i]] for i in range(n)))
    return cost, p0
