"""Optimal single-release planner for the zero-diffusion model.

For a horizon below the regime threshold T0 the switch function is
monotone and the optimum is a pointwise inversion plus a one-dimensional
multiplier bisection.  Above T0 the switch function is unimodal: the
multiplier is only bracketed, the ambiguous region is filled by a
bathtub (greedy level-set) secondary problem, and the remaining freedom
is resolved by a one-dimensional scan over the multiplier.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rates
from .domain import CarryingCapacity, Field, Grid, budget_integral
from .dynamics import FlowTable, check_hypothesis_H, propagate, switch_w
from .params import BioParams, compute_T0

BUDGET_RTOL = 1e-8
LAMBDA_ATOL = 1e-10
KKT_TOL = 1e-6

_flow_cache: dict = {}


def get_flow(params: BioParams, T: float, n_points: int = 4001) -> FlowTable:
    key = (params, T, n_points)
    if key not in _flow_cache:
        _flow_cache[key] = FlowTable(params, T, n_points)
    return _flow_cache[key]


@dataclass(frozen=True)
class Budget:
    """Release constraints: total stock C, per-point cap M, horizon T."""

    C: float
    M: float
    T: float

    def __post_init__(self):
        if self.C <= 0 or self.M <= 0 or self.T <= 0:
            raise ValueError("C, M and T must be positive")


@dataclass
class Plan:
    lambda_star: float
    p0_star: Field
    u0_star: Field
    cost: float
    regime: str
    budget_used: float
    kkt: dict = field(default_factory=dict)
    chi: np.ndarray | None = None  # bathtub indicator (one cell may be fractional)
    pT: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, K: CarryingCapacity, grid: Grid) -> dict:
        cells = []
        for i in range(grid.n_cells):
            cells.append(
                {
                    "x": list(map(float, grid.centers[i])),
                    "K": float(K.samples[i]),
                    "p0": float(self.p0_star.values[i]),
                    "u0": float(self.u0_star.values[i]),
                    "pT": float(self.pT[i]) if self.pT is not None else None,
                    "kkt_case": self.kkt.get("cases", [None] * grid.n_cells)[i],
                }
            )
        return {
            "lambda_star": self.lambda_star,
            "regime": self.regime,
            "cost": self.cost,
            "budget_used": self.budget_used,
            "cells": cells,
        }

    def to_json(self, path, K: CarryingCapacity, grid: Grid):
        with open(path, "w") as fh:
            json.dump(self.to_dict(K, grid), fh, indent=2)

    def to_csv(self, path, K: CarryingCapacity, grid: Grid):
        d = self.to_dict(K, grid)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            xcols = ["x"] if grid.dim == 1 else ["x", "y"]
            writer.writerow(xcols + ["K", "p0", "u0", "pT", "kkt_case"])
            for c in d["cells"]:
                writer.writerow(
                    [*c["x"], c["K"], c["p0"], c["u0"], c["pT"], c["kkt_case"]]
                )


def cost_J0(p0, K: CarryingCapacity, grid: Grid, T: float, params: BioParams,
            chi=None):
    """Terminal replacement cost: sum over cells of K^2 (1 - p(T))^2 dx.

    An optional bathtub indicator chi splits cells between the planned
    initial proportion (weight chi) and no release (weight 1 - chi).
    """
    p0 = p0.values if isinstance(p0, Field) else np.asarray(p0, dtype=float)
    pT = propagate(p0, T, params).pT
    per_cell = K.samples**2 * (1.0 - pT) ** 2
    if chi is not None:
        per_cell = chi * per_cell + (1.0 - chi) * K.samples**2
    return float(per_cell.sum() * grid.cell_measure)


def _p_M(K: CarryingCapacity, M: float, params: BioParams) -> np.ndarray:
    return np.atleast_1d(rates.G_inverse(M / K.samples, params))


def psi_small_T(lam: float, K: CarryingCapacity, grid: Grid, budget: Budget,
                params: BioParams, flow: FlowTable | None = None) -> np.ndarray:
    """Pointwise optimal p0 for a given multiplier in the monotone regime."""
    flow = flow or get_flow(params, budget.T)
    p_M = _p_M(K, budget.M, params)
    t = -lam / K.samples
    w0 = flow.w0
    w_pM = np.asarray(flow.w(p_M))
    out = np.asarray(flow.w_inverse(t))
    out = np.where(t <= w0, 0.0, out)
    out = np.where(t >= w_pM, p_M, out)
    return np.clip(out, 0.0, p_M)


def I_of_lambda(lam: float, K: CarryingCapacity, grid: Grid, budget: Budget,
                params: BioParams, flow: FlowTable | None = None) -> float:
    """Released-mosquito total of the monotone-regime candidate; nonincreasing in lambda."""
    p0 = psi_small_T(lam, K, grid, budget, params, flow)
    return budget_integral(p0, K, grid, params)


def psi0_big_T(lam: float, K: CarryingCapacity, budget: Budget,
               params: BioParams, flow: FlowTable) -> np.ndarray:
    """Lower selection of the unimodal-regime optimality correspondence."""
    p_M = _p_M(K, budget.M, params)
    t = -lam / K.samples
    w0 = flow.w0
    w_pM = np.asarray(flow.w(p_M))
    out = np.asarray(flow.w_inverse(t))
    out = np.where(t <= w0, 0.0, out)
    out = np.where(t > np.maximum(w0, w_pM), p_M, out)
    return np.clip(out, 0.0, p_M)


def psi1_big_T(lam: float, K: CarryingCapacity, budget: Budget,
               params: BioParams, flow: FlowTable) -> np.ndarray:
    """Upper selection: releases whenever the increasing branch admits a root."""
    p_M = _p_M(K, budget.M, params)
    t = -lam / K.samples
    w_pM = np.asarray(flow.w(p_M))
    p0T = flow.p0T if flow.p0T is not None else 0.0
    # infimum of w over (0, p_M): attained at p0T when interior, else at p_M
    w_min = np.where(p0T < p_M, flow.w_min, w_pM)
    out = np.asarray(flow.w_inverse(t))
    out = np.where(t < w_min, 0.0, out)
    out = np.where(t >= w_pM, p_M, out)
    return np.clip(out, 0.0, p_M)


def _I_of(psi_fn, lam, K, grid, budget, params, flow):
    return float(
        (K.samples * rates.G_antideriv(psi_fn(lam, K, budget, params, flow), params)).sum()
        * grid.cell_measure
    )


def lambda_brackets(K: CarryingCapacity, grid: Grid, budget: Budget,
                    params: BioParams, flow: FlowTable | None = None) -> tuple[float, float]:
    """Multiplier bracket [lambda0, lambda1] for the unimodal regime.

    I0 and I1 may jump, so the endpoints are located as one-sided
    infimum/supremum by predicate bisection to LAMBDA_ATOL.
    """
    flow = flow or get_flow(params, budget.T)
    if budget.C >= budget.M * grid.volume:
        raise ValueError("planner requires C < M * |domain|")
    lam_hi = float(np.max(-flow.w_min * K.samples)) * (1.0 + 1e-9) + 1.0

    # lambda0 = inf {lambda >= 0 : I0(lambda) <= C}
    if _I_of(psi0_big_T, 0.0, K, grid, budget, params, flow) <= budget.C:
        lam0 = 0.0
    else:
        lo, hi = 0.0, lam_hi
        while hi - lo > LAMBDA_ATOL:
            mid = 0.5 * (lo + hi)
            if _I_of(psi0_big_T, mid, K, grid, budget, params, flow) <= budget.C:
                hi = mid
            else:
                lo = mid
        lam0 = hi

    # lambda1 = sup {lambda >= 0 : I1(lambda) >= C}
    lo, hi = 0.0, lam_hi
    while hi - lo > LAMBDA_ATOL:
        mid = 0.5 * (lo + hi)
        if _I_of(psi1_big_T, mid, K, grid, budget, params, flow) >= budget.C:
            lo = mid
        else:
            hi = mid
    lam1 = lo
    if lam1 < lam0:
        lam1 = lam0
    return lam0, lam1


def omega_tilde(lam: float, K: CarryingCapacity, grid: Grid, budget: Budget,
                params: BioParams, flow: FlowTable | None = None):
    """Cells where the lower/upper selections disagree, plus the residual budget."""
    flow = flow or get_flow(params, budget.T)
    psi0 = psi0_big_T(lam, K, budget, params, flow)
    psi1 = psi1_big_T(lam, K, budget, params, flow)
    mask = np.abs(psi1 - psi0) > 1e-12
    off_budget = float(
        (K.samples[~mask] * rates.G_antideriv(psi1[~mask], params)).sum()
        * grid.cell_measure
    )
    return mask, budget.C - off_budget, psi0, psi1


@dataclass
class SecondaryProblem:
    omega_tilde: np.ndarray  # bool mask over cells
    c_tilde: float
    phi: np.ndarray  # switch function on the subset cells
    chi: np.ndarray  # in [0,1] on the subset cells, at most one fractional
    lambda_tilde: float
    surplus: float = 0.0


def secondary_bathtub(lam: float, K: CarryingCapacity, grid: Grid, budget: Budget,
                      params: BioParams, c_tilde: float, mask: np.ndarray,
                      psi1: np.ndarray, flow: FlowTable | None = None,
                      reverse_ties: bool = False) -> SecondaryProblem:
    """Greedy level-set fill of the ambiguous region.

    Cells are ranked by the marginal gain per released mosquito
    Phi = K pT (2 - pT) / G(psi1) and filled until the residual budget is
    met; exactly one cell may end up fractional.  Ties are broken by
    ascending cell index (descending with ``reverse_ties``), which picks
    one representative among rearrangement-equivalent optima.
    """
    flow = flow or get_flow(params, budget.T)
    idx = np.where(mask)[0]
    psi1_sub = psi1[idx]
    pT_sub = np.asarray(flow.pT(psi1_sub))
    G_sub = rates.G_antideriv(psi1_sub, params)
    phi = K.samples[idx] * pT_sub * (2.0 - pT_sub) / G_sub
    cell_cost = K.samples[idx] * G_sub * grid.cell_measure

    tie = -idx if reverse_ties else idx
    order = np.lexsort((tie, -phi))
    chi = np.zeros(len(idx))
    remaining = c_tilde
    lambda_tilde = 0.0
    surplus = 0.0
    for j in order:
        if remaining <= 0.0:
            break
        take = min(1.0, remaining / cell_cost[j])
        chi[j] = take
        remaining -= take * cell_cost[j]
        lambda_tilde = phi[j]
    if remaining > 0.0:
        surplus = remaining
    return SecondaryProblem(
        omega_tilde=mask, c_tilde=c_tilde, phi=phi, chi=chi,
        lambda_tilde=lambda_tilde, surplus=surplus,
    )


def _assemble_large_T(lam, K, grid, budget, params, flow, reverse_ties=False):
    """Candidate (p0, chi, budget_used, interp cost) for one multiplier value."""
    mask, c_tilde, psi0, psi1 = omega_tilde(lam, K, grid, budget, params, flow)
    p0 = psi1.copy()
    chi_full = np.ones(grid.n_cells)
    if mask.any() and c_tilde > 0.0:
        sec = secondary_bathtub(lam, K, grid, budget, params, c_tilde, mask,
                                psi1, flow, reverse_ties)
        chi_full[mask] = sec.chi
        p0[mask] = np.where(sec.chi > 0.0, psi1[mask], 0.0)
    elif mask.any():
        chi_full[mask] = 0.0
        p0[mask] = 0.0
        sec = None
    else:
        sec = None
    # fractional cells keep psi1 as the release level; chi carries the weight
    eff_chi = np.where(p0 > 0.0, chi_full, 1.0)
    pT = np.asarray(flow.pT(p0))
    per_cell = K.samples**2 * (1.0 - pT) ** 2
    per_cell = eff_chi * per_cell + (1.0 - eff_chi) * K.samples**2
    cost = float(per_cell.sum() * grid.cell_measure)
    used = float(
        (eff_chi * K.samples * rates.G_antideriv(p0, params)).sum() * grid.cell_measure
    )
    return p0, eff_chi, used, cost, sec


def kkt_residuals(plan: Plan, K: CarryingCapacity, grid: Grid, T: float,
                  params: BioParams) -> dict:
    """Exact first/second-order optimality residuals of a plan, per KKT case.

    Uses the full propagator (not the interpolation tables), so this is an
    independent verification of interpolation-assembled plans.
    """
    p0 = plan.p0_star.values
    u0 = plan.u0_star.values
    lam = plan.lambda_star
    res = propagate(p0, T, params)
    w = -rates.g_frac(p0, params) * (1.0 - res.pT) * res.sensitivity
    gp = rates.g_prime(p0, params)
    g = rates.g_frac(p0, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        a_fn = gp / g - res.sensitivity / (1.0 - res.pT) + res.a_integral
    dw = w * a_fn
    target = -lam / K.samples

    M = plan.diagnostics.get("M", np.inf)
    cases = []
    viol = {"at_max": 0.0, "at_zero": 0.0, "interior": 0.0, "second_order": 0.0}
    for i in range(grid.n_cells):
        chi_i = plan.chi[i] if plan.chi is not None else 1.0
        if plan.chi is not None and 1e-12 < chi_i < 1.0 - 1e-12:
            cases.append("fractional")
            # marginal bathtub cell: both the zero and interior branches apply
            viol["interior"] = max(viol["interior"], abs(w[i] - target[i]))
            continue
        if chi_i <= 1e-12 or u0[i] <= 1e-12:
            cases.append("zero")
            viol["at_zero"] = max(viol["at_zero"], target[i] - w[i])
        elif u0[i] >= M * (1.0 - 1e-9):
            cases.append("at_max")
            viol["at_max"] = max(viol["at_max"], w[i] - target[i])
        else:
            cases.append("interior")
            viol["interior"] = max(viol["interior"], abs(w[i] - target[i]))
            viol["second_order"] = max(viol["second_order"], -dw[i])
    viol["max"] = max(viol["at_max"], viol["at_zero"], viol["interior"])
    viol["cases"] = cases
    return viol


def _finalize(plan: Plan, K, grid, budget, params):
    plan.pT = propagate(plan.p0_star.values, budget.T, params).pT
    plan.diagnostics["M"] = budget.M
    plan.kkt = kkt_residuals(plan, K, grid, budget.T, params)
    return plan


def solve_small_T(K: CarryingCapacity, grid: Grid, budget: Budget,
                  params: BioParams, flow: FlowTable | None = None,
                  lambda_bracket: tuple[float, float] | None = None,
                  require_H: bool = True) -> Plan:
    """Unique optimal plan for T <= T0 via bisection on the budget multiplier."""
    flow = flow or get_flow(params, budget.T)
    if budget.T > flow.T0:
        raise ValueError(f"T={budget.T} exceeds T0={flow.T0:.6g}; use solve_large_T")
    if budget.C >= budget.M * grid.volume:
        raise ValueError("planner requires C < M * |domain| (otherwise release M everywhere)")
    if require_H and not check_hypothesis_H(params, budget.T, n_steps=1000)["holds"]:
        raise ValueError("unimodality hypothesis fails for these parameters")

    const_K = float(np.ptp(K.samples)) < 1e-12
    if const_K:
        K0 = float(K.samples[0])
        p0_val = rates.G_inverse(budget.C / (K0 * grid.volume), params)
        p0 = np.full(grid.n_cells, p0_val)
        lam_star = -K0 * float(switch_w(p0_val, budget.T, params))
        regime = "constant_K"
    else:
        p_M = _p_M(K, budget.M, params)
        # zero release everywhere needs lambda >= -w(0) K(x) for every x
        lam_max = -flow.w0 * float(K.samples.max())
        lam_min = -float(np.max(K.samples * np.asarray(flow.w(p_M))))
        lam_min = max(0.0, min(lam_min, lam_max))
        if lambda_bracket is not None:
            lam_min, lam_max = lambda_bracket
        lo, hi = lam_min, lam_max
        lam_star = 0.5 * (lo + hi)
        for _ in range(200):
            lam_star = 0.5 * (lo + hi)
            I = I_of_lambda(lam_star, K, grid, budget, params, flow)
            if abs(I - budget.C) <= BUDGET_RTOL * budget.C:
                break
            if I > budget.C:
                lo = lam_star
            else:
                hi = lam_star
        p0 = psi_small_T(lam_star, K, grid, budget, params, flow)
        regime = "small_T"

    u0 = K.samples * rates.G_antideriv(p0, params)
    plan = Plan(
        lambda_star=lam_star,
        p0_star=Field(p0, "p0"),
        u0_star=Field(u0, "u0"),
        cost=cost_J0(p0, K, grid, budget.T, params),
        regime=regime,
        budget_used=budget_integral(p0, K, grid, params),
    )
    return _finalize(plan, K, grid, budget, params)


def _golden_refine(fn, xs, costs, tol_rel=1e-8):
    """Golden-section refinement around the incumbent of a scanned 1D function."""
    i = int(np.argmin(costs))
    lo = xs[max(0, i - 1)]
    hi = xs[min(len(xs) - 1, i + 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    scale = max(abs(a), abs(b), 1.0)
    while (b - a) > tol_rel * scale:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    x = c if fc < fd else d
    fx = min(fc, fd)
    if costs[i] < fx:
        return xs[i], costs[i]
    return x, fx


def solve_large_T(K: CarryingCapacity, grid: Grid, budget: Budget,
                  params: BioParams, n_lambda: int = 64,
                  flow: FlowTable | None = None,
                  reverse_ties: bool = False,
                  require_H: bool = True) -> Plan:
    """Best-candidate plan for T > T0 via the one-dimensional multiplier scan.

    If the ambiguous region is empty at lambda0 the plan is direct
    (last statement of the characterization theorem); otherwise each
    scanned multiplier gets a bathtub fill and the cheapest candidate wins.
    Global optimality for general K is only certified by the returned KKT
    diagnostics, not claimed.
    """
    flow = flow or get_flow(params, budget.T)
    if budget.T <= flow.T0:
        raise ValueError(f"T={budget.T} below T0={flow.T0:.6g}; use solve_small_T")
    if budget.C >= budget.M * grid.volume:
        raise ValueError("planner requires C < M * |domain|")
    if require_H and not check_hypothesis_H(params, budget.T, n_steps=2500)["holds"]:
        raise ValueError("unimodality hypothesis fails for these parameters")

    lam0, lam1 = lambda_brackets(K, grid, budget, params, flow)
    mask0, _, _, _ = omega_tilde(lam0, K, grid, budget, params, flow)

    if not mask0.any():
        # direct regime: refine lambda on the continuous branch to saturate C
        lo, hi = max(0.0, lam0 - 10 * LAMBDA_ATOL), lam1 + 10 * LAMBDA_ATOL
        lam_star = lam0
        for _ in range(200):
            lam_star = 0.5 * (lo + hi)
            I = _I_of(psi1_big_T, lam_star, K, grid, budget, params, flow)
            if abs(I - budget.C) <= BUDGET_RTOL * budget.C:
                break
            if I > budget.C:
                lo = lam_star
            else:
                hi = lam_star
        p0 = psi1_big_T(lam_star, K, budget, params, flow)
        chi = None
        regime = "large_T_direct"
    else:
        def scan_cost(lam):
            return _assemble_large_T(lam, K, grid, budget, params, flow,
                                     reverse_ties)[3]

        xs = np.linspace(lam0, lam1, n_lambda)
        costs = np.array([scan_cost(x) for x in xs])
        lam_star, _ = _golden_refine(scan_cost, xs, costs)
        p0, chi, _, _, _ = _assemble_large_T(lam_star, K, grid, budget, params,
                                             flow, reverse_ties)
        regime = "large_T_bathtub"

    u0 = K.samples * rates.G_antideriv(p0, params)
    eff_chi = chi if chi is not None else np.ones(grid.n_cells)
    used = float((eff_chi * u0).sum() * grid.cell_measure)
    pT_exact = propagate(p0, budget.T, params).pT
    per_cell = eff_chi * K.samples**2 * (1.0 - pT_exact) ** 2 \
        + (1.0 - eff_chi) * K.samples**2
    plan = Plan(
        lambda_star=lam_star,
        p0_star=Field(p0, "p0"),
        u0_star=Field(u0 * eff_chi, "u0"),
        cost=float(per_cell.sum() * grid.cell_measure),
        regime=regime,
        budget_used=used,
        chi=chi,
        diagnostics={"lambda0": lam0, "lambda1": lam1},
    )
    return _finalize(plan, K, grid, budget, params)


def solve(K: CarryingCapacity, grid: Grid, budget: Budget, params: BioParams,
          **kw) -> Plan:
    """Dispatch on the horizon regime; handles the trivial saturated case."""
    if budget.C >= budget.M * grid.volume:
        p_M = _p_M(K, budget.M, params)
        u0 = np.full(grid.n_cells, budget.M)
        plan = Plan(
            lambda_star=0.0,
            p0_star=Field(p_M, "p0"),
            u0_star=Field(u0, "u0"),
            cost=cost_J0(p_M, K, grid, budget.T, params),
            regime="saturated",
            budget_used=float(u0.sum() * grid.cell_measure),
            diagnostics={"note": "C >= M|domain|: release at the cap everywhere"},
        )
        plan.pT = propagate(p_M, budget.T, params).pT
        plan.diagnostics["M"] = budget.M
        return plan
    T0 = compute_T0(params)
    if budget.T <= T0:
        return solve_small_T(K, grid, budget, params, **kw)
    return solve_large_T(K, grid, budget, params, **kw)


def monotone_rearrange(p0, grid: Grid, intervals, K: CarryingCapacity | None = None):
    """Decreasing rearrangement of a field within constant-K index ranges.

    ``intervals`` is a list of (start, stop) cell-index ranges.  The multiset
    of values is preserved per interval, so budget and cost integrals are
    invariant whenever K is constant there (checked when K is given).
    """
    vals = (p0.values if isinstance(p0, Field) else np.asarray(p0, dtype=float)).copy()
    for start, stop in intervals:
        if K is not None and np.ptp(K.samples[start:stop]) > 1e-12:
            raise ValueError(
                f"K varies on interval [{start}, {stop}); rearrangement invalid"
            )
        vals[start:stop] = np.sort(vals[start:stop])[::-1]
    return Field(vals, p0.label if isinstance(p0, Field) else "p0")
