"""Biological parameters of the two-population mosquito model and derived thresholds.

The five rates describe a wild population (index 1) competing with a
*Wolbachia*-infected one (index 2) under cytoplasmic incompatibility of
strength ``s_h``.  Everything downstream (bistable rate functions, switch
function, planners) is parameterized by a :class:`BioParams` instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq


class ParameterError(ValueError):
    """Raised when a parameter set violates the model's standing assumptions."""


@dataclass(frozen=True)
class BioParams:
    """Normalized birth/death rates and the cytoplasmic-incompatibility level.

    Invariants enforced at construction:

    * ``0 < d1 <= d2 <= b2_0 <= b1_0`` (infected population carries a
      fitness disadvantage),
    * ``1 - s_h < d1*b2_0 / (d2*b1_0) < 1`` so that the unstable threshold
      proportion lies strictly inside (0, 1).
    """

    b1_0: float = 1.0
    b2_0: float = 0.9
    d1: float = 0.27
    d2: float = 0.3
    s_h: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.d1 <= self.d2 <= self.b2_0 <= self.b1_0):
            raise ParameterError(
                f"rate ordering 0 < d1 <= d2 <= b2_0 <= b1_0 violated: "
                f"d1={self.d1}, d2={self.d2}, b2_0={self.b2_0}, b1_0={self.b1_0}"
            )
        if not (0.0 <= self.s_h <= 1.0):
            raise ParameterError(f"s_h must lie in [0, 1], got {self.s_h}")
        ratio = self.d1 * self.b2_0 / (self.d2 * self.b1_0)
        if not (1.0 - self.s_h < ratio < 1.0):
            raise ParameterError(
                f"threshold condition 1 - s_h < d1*b2_0/(d2*b1_0) < 1 violated "
                f"(ratio={ratio}, s_h={self.s_h}); the unstable proportion "
                f"would leave (0, 1)"
            )


#: Parameter values used throughout the numerical experiments.
REF_PARAMS = BioParams(b1_0=1.0, b2_0=0.9, d1=0.27, d2=0.3, s_h=0.9)


def theta(params: BioParams) -> float:
    """Unstable equilibrium proportion of the bistable dynamics."""
    return (1.0 - params.d1 * params.b2_0 / (params.d2 * params.b1_0)) / params.s_h


def _r_cubic_coeffs(params: BioParams):
    # Cubic whose unique root in (0, 1) is the inflection point of f.
    th = theta(params)
    sh = params.s_h
    kappa = 1.0 + sh - params.b2_0 / params.b1_0
    a = sh - sh**2 * th - kappa**2 + kappa * sh + kappa * sh * th
    b = 3.0 * (kappa - sh - sh * th)
    c = -3.0 * (1.0 - sh * th)
    d = th - kappa * th + 1.0
    return a, b, c, d


def theta2(params: BioParams) -> float:
    """Unique zero of f'' in (0, 1), located by bracketing the sign change."""
    a, b, c, d = _r_cubic_coeffs(params)

    def r(p):
        return ((a * p + b) * p + c) * p + d

    if r(0.0) * r(1.0) > 0.0:
        raise ParameterError(
            "cubic locating the inflection of f has no sign change on [0, 1]; "
            "parameter set is outside the model's validity range"
        )
    return brentq(r, 0.0, 1.0, xtol=1e-14, rtol=1e-15)


@dataclass(frozen=True)
class DerivedThresholds:
    theta: float
    theta2: float
    theta_bar: float
    T0: float


def compute_T0(params: BioParams) -> float:
    """Horizon separating the monotone and unimodal regimes of the switch function.

    ``T0 = ln((f''(0)g(0) - f'(0)g'(0)) / (g(0)(f''(0) - f'(0)))) / f'(0)``,
    always positive for valid parameters since the logarithm argument lies
    in (0, 1) and f'(0) < 0.
    """
    from . import rates

    f1 = rates.f_prime(0.0, params)
    f2 = rates.f_second(0.0, params)
    g0 = rates.g_frac(0.0, params)
    g1 = rates.g_prime(0.0, params)
    arg = (f2 * g0 - f1 * g1) / (g0 * (f2 - f1))
    if not (0.0 < arg < 1.0):
        raise ParameterError(
            f"logarithm argument {arg} outside (0, 1); parameter ordering violated"
        )
    return math.log(arg) / f1


def derived_thresholds(params: BioParams) -> DerivedThresholds:
    th = theta(params)
    th2 = theta2(params)
    return DerivedThresholds(
        theta=th, theta2=th2, theta_bar=max(th, th2), T0=compute_T0(params)
    )


def clamp_proportion(p, tol: float = 1e-12):
    """Clamp values within ``tol`` outside [0, 1] back onto the interval.

    Values beyond the tolerance raise, so round-off at constraint boundaries
    is absorbed while genuine domain errors still surface.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < -tol) or np.any(p > 1.0 + tol):
        bad = p[(p < -tol) | (p > 1.0 + tol)]
        raise ValueError(f"proportion outside [0, 1] beyond tolerance: {bad[:5]}")
    out = np.clip(p, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out
