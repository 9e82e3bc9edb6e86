"""Closed-form rate functions of the reduced scalar model.

``f`` is the bistable reaction rate of the infected proportion, ``g`` the
release-efficiency fraction, ``G`` its antiderivative (vanishing at zero)
of ``1/g``, and ``psi`` the correction term multiplying the carrying-capacity
curvature in the diffusive model.  All functions accept scalars or numpy
arrays and clamp inputs within 1e-12 of [0, 1].
"""

from __future__ import annotations

import numpy as np

from .params import BioParams, clamp_proportion, theta

# G diverges at p = 1; evaluations are restricted to [0, 1 - G_PMAX_MARGIN].
G_PMAX_MARGIN = 1e-9


def _poly_pieces(p, params: BioParams):
    """Numerator/denominator polynomials of f and their derivatives at p."""
    th = theta(params)
    c = params.b1_0 * params.d2 * params.s_h
    n = c * (-(p**3) + (1.0 + th) * p**2 - th * p)
    n1 = c * (-3.0 * p**2 + 2.0 * (1.0 + th) * p - th)
    n2 = c * (-6.0 * p + 2.0 * (1.0 + th))
    b1, b2, sh = params.b1_0, params.b2_0, params.s_h
    dn = b1 * sh * p**2 + (b2 - b1 * (1.0 + sh)) * p + b1
    dn1 = 2.0 * b1 * sh * p + (b2 - b1 * (1.0 + sh))
    dn2 = 2.0 * b1 * sh
    return n, n1, n2, dn, dn1, dn2


def _scalarize(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def f_rate(p, params: BioParams):
    """Bistable growth rate of the infected proportion; zero at 0, theta, 1."""
    p = clamp_proportion(p)
    n, _, _, dn, _, _ = _poly_pieces(p, params)
    return _scalarize(n / dn)


def f_prime(p, params: BioParams):
    p = clamp_proportion(p)
    n, n1, _, dn, dn1, _ = _poly_pieces(p, params)
    return _scalarize((n1 * dn - n * dn1) / dn**2)


def f_second(p, params: BioParams):
    p = clamp_proportion(p)
    n, n1, n2, dn, dn1, dn2 = _poly_pieces(p, params)
    num = n2 * dn**2 - n * dn2 * dn - 2.0 * n1 * dn1 * dn + 2.0 * n * dn1**2
    return _scalarize(num / dn**3)


def g_frac(p, params: BioParams):
    """Fraction of released mosquitoes effectively converted into proportion.

    Decreasing, with g(0) = 1 and g(1) = 0.
    """
    p = clamp_proportion(p)
    b1, sh = params.b1_0, params.s_h
    q = b1 * (1.0 - p) * (1.0 - sh * p)
    return _scalarize(q / (q + params.b2_0 * p))


def g_prime(p, params: BioParams):
    p = clamp_proportion(p)
    b1, b2, sh = params.b1_0, params.b2_0, params.s_h
    q = b1 * (1.0 - p) * (1.0 - sh * p)
    q1 = b1 * (2.0 * sh * p - (1.0 + sh))
    dn = q + b2 * p
    return _scalarize(b2 * (q1 * p - q) / dn**2)


def G_antideriv(p, params: BioParams):
    """Antiderivative of 1/g vanishing at zero, by partial fractions.

    ``1/g = 1 + (b2_0/b1_0) p / ((1-p)(1-s_h p))``; the simple poles at
    p = 1 and p = 1/s_h integrate to logarithms.  Degenerate s_h values
    (double pole at s_h = 1, single pole at s_h = 0) take dedicated
    branches to avoid cancellation.
    """
    p = clamp_proportion(p)
    if np.any(np.asarray(p) > 1.0 - G_PMAX_MARGIN):
        raise ValueError(f"G is evaluated only on [0, {1.0 - G_PMAX_MARGIN}]")
    ratio = params.b2_0 / params.b1_0
    sh = params.s_h
    if sh < 1e-8:
        extra = -np.log1p(-p) - p
    elif sh > 1.0 - 1e-8:
        extra = 1.0 / (1.0 - p) - 1.0 + np.log1p(-p)
    else:
        extra = (-np.log1p(-p) + np.log1p(-sh * p) / sh) / (1.0 - sh)
    return _scalarize(p + ratio * extra)


def G_inverse(y, params: BioParams):
    """Invert G by safeguarded Newton (bisection fallback), residual tol 1e-12."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y_arr < -1e-12):
        raise ValueError("G_inverse requires y >= 0")
    y_arr = np.maximum(y_arr, 0.0)
    p_hi = 1.0 - G_PMAX_MARGIN
    y_max = G_antideriv(p_hi, params)
    if np.any(y_arr > y_max):
        raise ValueError(f"y exceeds reachable range of G (max {y_max:.6g})")

    p = y_arr / (1.0 + y_arr)
    lo = np.zeros_like(y_arr)
    hi = np.full_like(y_arr, p_hi)
    for _ in range(100):
        resid = G_antideriv(p, params) - y_arr
        if np.all(np.abs(resid) <= 1e-12):
            break
        hi = np.where(resid > 0.0, p, hi)
        lo = np.where(resid < 0.0, p, lo)
        # Newton step; G' = 1/g > 0
        step = resid * g_frac(p, params)
        p_new = p - step
        bad = (p_new <= lo) | (p_new >= hi)
        p = np.where(bad, 0.5 * (lo + hi), p_new)
    out = np.asarray(clamp_proportion(p))
    if np.isscalar(y) or np.asarray(y).ndim == 0:
        return float(out[0])
    return out


def psi_term(p, params: BioParams, variant: str = "printed"):
    """Curvature-coupling term of the diffusive model.

    The ``printed`` variant uses the denominator ``(1-p)(1-s_h p) + b2_0 p``;
    the ``b1-restored`` variant multiplies the first product by b1_0,
    matching the denominators of f and g.  They coincide when b1_0 = 1.
    """
    p = clamp_proportion(p)
    b1, b2, sh = params.b1_0, params.b2_0, params.s_h
    num = p * (1.0 - p) * (b2 - b1 * (1.0 - sh * p))
    if variant == "printed":
        dn = (1.0 - p) * (1.0 - sh * p) + b2 * p
    elif variant == "b1-restored":
        dn = b1 * (1.0 - p) * (1.0 - sh * p) + b2 * p
    else:
        raise ValueError(f"unknown psi variant {variant!r}")
    return _scalarize(num / dn)


def psi_prime(p, params: BioParams, variant: str = "printed"):
    """Derivative of the curvature-coupling term (used by the adjoint solver)."""
    p = clamp_proportion(p)
    b1, b2, sh = params.b1_0, params.b2_0, params.s_h
    num = p * (1.0 - p) * (b2 - b1 * (1.0 - sh * p))
    num1 = (1.0 - 2.0 * p) * (b2 - b1 * (1.0 - sh * p)) + p * (1.0 - p) * b1 * sh
    if variant == "printed":
        dn = (1.0 - p) * (1.0 - sh * p) + b2 * p
        dn1 = 2.0 * sh * p - 1.0 - sh + b2
    elif variant == "b1-restored":
        dn = b1 * (1.0 - p) * (1.0 - sh * p) + b2 * p
        dn1 = b1 * (2.0 * sh * p - 1.0 - sh) + b2
    else:
        raise ValueError(f"unknown psi variant {variant!r}")
    return _scalarize((num1 * dn - num * dn1) / dn**2)
