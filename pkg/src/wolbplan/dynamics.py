"""Scalar bistable flow, variational sensitivities, and the switch function.

The reduced model per spatial point is ``p' = f(p)``.  Alongside ``p`` we
integrate the variational equation ``S' = f'(p) S`` (so that
``S(T) = dp(T)/dp0``) and the curvature-weighted integral
``a(T) = int_0^T f''(p(s)) S(s) ds`` needed by the sign study of the switch
function.  The three-state system is advanced jointly by fixed-step RK4, so
no trajectory storage is ever needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import rates
from .params import BioParams, clamp_proportion, compute_T0, derived_thresholds, theta


@njit(cache=True)
def _flow_kernel(p0s, T, n_steps, c, th, b1, b2, sh):
    """RK4 on (p, S, a) for every lane of p0s; fixed points are frozen.

    S is the sensitivity dp(t)/dp0 (variational equation S' = f'(p) S) and
    a accumulates int f''(p(s)) S(s) ds.
    """
    n = p0s.shape[0]
    p_out = np.empty(n)
    ls_out = np.empty(n)
    a_out = np.empty(n)
    dt = T / n_steps
    dn1_c = b2 - b1 * (1.0 + sh)
    dn2 = 2.0 * b1 * sh
    for i in range(n):
        p = p0s[i]
        frozen = p == 0.0 or p == 1.0 or p == th
        ls = 1.0
        a = 0.0
        for _ in range(n_steps):
            kp0 = kp1 = kp2 = kp3 = 0.0
            kl0 = kl1 = kl2 = kl3 = 0.0
            ka0 = ka1 = ka2 = ka3 = 0.0
            pv = p
            lv = ls
            for s in range(4):
                nump = c * pv * (-(pv * pv) + (1.0 + th) * pv - th)
                n1 = c * (-3.0 * pv * pv + 2.0 * (1.0 + th) * pv - th)
                n2 = c * (-6.0 * pv + 2.0 * (1.0 + th))
                dn = b1 * sh * pv * pv + dn1_c * pv + b1
                dn1 = dn2 * pv + dn1_c
                fv = 0.0 if frozen else nump / dn
                f1 = (n1 * dn - nump * dn1) / (dn * dn)
                f2 = (
                    n2 * dn * dn - nump * dn2 * dn - 2.0 * n1 * dn1 * dn
                    + 2.0 * nump * dn1 * dn1
                ) / (dn * dn * dn)
                fa = f2 * lv
                fl = f1 * lv
                if s == 0:
                    kp0, kl0, ka0 = fv, fl, fa
                    pv = p + 0.5 * dt * fv
                    lv = ls + 0.5 * dt * fl
                elif s == 1:
                    kp1, kl1, ka1 = fv, fl, fa
                    pv = p + 0.5 * dt * fv
                    lv = ls + 0.5 * dt * fl
                elif s == 2:
                    kp2, kl2, ka2 = fv, fl, fa
                    pv = p + dt * fv
                    lv = ls + dt * fl
                else:
                    kp3, kl3, ka3 = fv, fl, fa
            p = p + dt / 6.0 * (kp0 + 2.0 * kp1 + 2.0 * kp2 + kp3)
            ls = ls + dt / 6.0 * (kl0 + 2.0 * kl1 + 2.0 * kl2 + kl3)
            a = a + dt / 6.0 * (ka0 + 2.0 * ka1 + 2.0 * ka2 + ka3)
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
        p_out[i] = p
        ls_out[i] = ls
        a_out[i] = a
    return p_out, ls_out, a_out


def _n_steps(T: float) -> int:
    dt = min(1e-3, T / 1000.0) if T > 0 else 1.0
    return max(1, int(math.ceil(T / dt - 1e-12))) if T > 0 else 0


@dataclass(frozen=True)
class PropagationResult:
    """Terminal proportion, its derivative w.r.t. p0, and the f''-weighted integral."""

    pT: float | np.ndarray
    sensitivity: float | np.ndarray
    a_integral: float | np.ndarray


def propagate(p0, T: float, params: BioParams, n_steps: int | None = None) -> PropagationResult:
    """Advance p' = f(p) from p0 to time T with sensitivities.

    Accepts a scalar or an array of initial proportions; the variational
    equation is integrated jointly so the sensitivity stays well defined at
    the fixed points 0, theta, 1 where f(pT)/f(p0) degenerates.
    """
    scalar = np.asarray(p0).ndim == 0
    p0a = np.atleast_1d(clamp_proportion(p0)).astype(float)
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        pT, sens, a = p0a.copy(), np.ones_like(p0a), np.zeros_like(p0a)
    else:
        steps = n_steps if n_steps is not None else _n_steps(T)
        pT, sens, a = _flow_kernel(
            p0a, T, steps,
            params.b1_0 * params.d2 * params.s_h, theta(params),
            params.b1_0, params.b2_0, params.s_h,
        )
    if scalar:
        return PropagationResult(float(pT[0]), float(sens[0]), float(a[0]))
    return PropagationResult(pT, sens, a)


def switch_w(p0, T: float, params: BioParams, n_steps: int | None = None):
    """Switch function w_T(p0) = -g(p0)(1 - p(T)) dp(T)/dp0; negative on [0, 1)."""
    res = propagate(p0, T, params, n_steps=n_steps)
    return -rates.g_frac(p0, params) * (1.0 - res.pT) * res.sensitivity


def A_function(p0, T: float, params: BioParams, n_steps: int | None = None):
    """Sign factor of dw/dp0: dw/dp0 = w * A, so sign(dw/dp0) = -sign(A)."""
    res = propagate(p0, T, params, n_steps=n_steps)
    gp = rates.g_prime(p0, params)
    g = rates.g_frac(p0, params)
    return gp / g - res.sensitivity / (1.0 - res.pT) + res.a_integral


def check_hypothesis_H(
    params: BioParams,
    T: float,
    n_grid: int = 2000,
    n_steps: int | None = None,
) -> dict:
    """Count strict sign changes of A on (0, theta_bar).

    The unimodal-switch hypothesis holds iff A changes sign at most once.
    Values with |A| < 1e-9 are treated as zero to suppress spurious
    crossings from round-off.
    """
    if n_grid < 100:
        raise ValueError("n_grid must be at least 100")
    th_bar = derived_thresholds(params).theta_bar
    grid = np.linspace(1e-6, th_bar - 1e-6, n_grid)
    a_vals = A_function(grid, T, params, n_steps=n_steps)
    signs = np.sign(np.where(np.abs(a_vals) < 1e-9, 0.0, a_vals))
    signs = signs[signs != 0.0]
    changes = int(np.count_nonzero(np.diff(signs) != 0.0))
    return {"holds": changes <= 1, "sign_changes": changes}


def w_inverse_increasing(
    target: float,
    T: float,
    params: BioParams,
    bracket: tuple[float, float],
    tol: float = 1e-10,
) -> float:
    """Solve w_T(p0) = target on a bracket where w is increasing (Brent)."""
    lo, hi = bracket
    w_lo = float(switch_w(lo, T, params))
    w_hi = float(switch_w(hi, T, params))
    if not (min(w_lo, w_hi) - tol <= target <= max(w_lo, w_hi) + tol):
        raise ValueError(
            f"target {target} outside switch-function range [{w_lo}, {w_hi}] on bracket"
        )
    if abs(w_lo - target) <= tol:
        return lo
    if abs(w_hi - target) <= tol:
        return hi
    return brentq(
        lambda p: float(switch_w(p, T, params)) - target, lo, hi,
        xtol=1e-14, rtol=8.9e-16,
    )


def w_minimizer(T: float, params: BioParams) -> float:
    """Interior minimizer p0^T of w for T > T0, located as the zero of A."""
    T0 = compute_T0(params)
    if T <= T0:
        raise ValueError(f"w has no interior minimum for T={T} <= T0={T0:.6g}")
    th_bar = derived_thresholds(params).theta_bar
    grid = np.linspace(1e-9, th_bar, 257)
    a_vals = np.atleast_1d(A_function(grid, T, params))
    pos = np.where(np.sign(a_vals[:-1]) * np.sign(a_vals[1:]) < 0)[0]
    if len(pos) == 0:
        raise ValueError("no sign change of A located in (0, theta_bar)")
    i = pos[0]
    return brentq(
        lambda p: float(A_function(p, T, params)), grid[i], grid[i + 1],
        xtol=1e-12, rtol=8.9e-16,
    )


class FlowTable:
    """Dense tabulation of the time-T flow for fast, repeated switch queries.

    One batched RK4 pass over a fine p0 grid caches p(T), the sensitivity,
    w, and A; monotone (PCHIP) interpolants then answer pointwise queries
    and branch inversions at a cost independent of T.  Every plan built on
    top of this table is re-verified against the exact propagator by the
    KKT residual check.
    """

    def __init__(self, params: BioParams, T: float, n_points: int = 4001):
        self.params = params
        self.T = T
        self.T0 = compute_T0(params)
        self.thresholds = derived_thresholds(params)
        self.p0_grid = np.linspace(0.0, 1.0, n_points)
        res = propagate(self.p0_grid, T, params)
        self.pT_grid = res.pT
        self.sens_grid = res.sensitivity
        self.w_grid = -rates.g_frac(self.p0_grid, params) * (1.0 - res.pT) * res.sensitivity
        gp = rates.g_prime(self.p0_grid, params)
        g = rates.g_frac(self.p0_grid, params)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.a_grid = gp / g - res.sensitivity / (1.0 - res.pT) + res.a_integral
        self._pT_interp = PchipInterpolator(self.p0_grid, self.pT_grid)
        self._w_interp = PchipInterpolator(self.p0_grid, self.w_grid)
        if T > self.T0:
            self.p0T = w_minimizer(T, params)
            self.w_min = float(switch_w(self.p0T, T, params))
        else:
            self.p0T = None
            self.w_min = float(self.w_grid[0])
        self.w0 = float(self.w_grid[0])
        self._inv_branch = self._build_inverse()

    def _build_inverse(self):
        # inverse interpolation on the increasing branch [p0T, 1)
        start = 0.0 if self.p0T is None else self.p0T
        mask = self.p0_grid > start
        ps = np.concatenate([[start], self.p0_grid[mask]])
        ws = np.concatenate([[self.w_min], self.w_grid[mask]])
        keep = np.concatenate([[True], np.diff(ws) > 0.0])
        while not keep.all():
            ps, ws = ps[keep], ws[keep]
            keep = np.concatenate([[True], np.diff(ws) > 0.0])
        return PchipInterpolator(ws, ps)

    def pT(self, p0):
        return self._pT_interp(p0)

    def w(self, p0):
        return self._w_interp(p0)

    def w_inverse(self, target):
        """Inverse of w restricted to its increasing branch."""
        target = np.clip(target, self.w_min, self.w_grid[-1])
        return np.clip(self._inv_branch(target), 0.0, 1.0)
