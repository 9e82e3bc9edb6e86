"""Scikit-learn style wrapper around the release planner.

The planner itself is functional (landscape in, plan out); this estimator
exposes it through the familiar ``fit``/``predict`` surface so it can sit
in sklearn pipelines and grid searches.  ``fit`` takes the per-cell
carrying capacity as the feature column and stores the solved plan in
trailing-underscore attributes; ``predict`` applies the fitted
multiplier's pointwise release rule to new capacity values.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import rates
from .domain import CarryingCapacity, build_grid
from .params import BioParams
from .planner import Budget, get_flow, psi0_big_T, psi1_big_T, psi_small_T, solve


class ReleasePlanner(BaseEstimator):
    """Plan a single optimal mosquito release over a 1D landscape.

    Parameters mirror the functional planner: total stock ``C``, per-cell
    cap ``M``, horizon ``T``, domain length ``extent``, and the biological
    rates.  After ``fit``, the plan is available as ``u0_``, ``p0_``,
    ``cost_``, ``lambda_star_`` and ``plan_``.
    """

    def __init__(self, C=30.0, M=250.0, T=1.0, extent=1.0,
                 b1_0=1.0, b2_0=0.9, d1=0.27, d2=0.3, s_h=0.9):
        self.C = C
        self.M = M
        self.T = T
        self.extent = extent
        self.b1_0 = b1_0
        self.b2_0 = b2_0
        self.d1 = d1
        self.d2 = d2
        self.s_h = s_h

    def _bio_params(self) -> BioParams:
        return BioParams(b1_0=self.b1_0, b2_0=self.b2_0, d1=self.d1,
                         d2=self.d2, s_h=self.s_h)

    def fit(self, X, y=None):
        """Solve the plan for per-cell carrying capacities X (n_cells,) or (n_cells, 1)."""
        K_samples = np.asarray(X, dtype=float)
        if K_samples.ndim == 2:
            if K_samples.shape[1] != 1:
                raise ValueError("X must be a single carrying-capacity column")
            K_samples = K_samples[:, 0]
        if K_samples.ndim != 1 or K_samples.size < 2:
            raise ValueError("X must hold at least two cells")
        params = self._bio_params()
        grid = build_grid(1, [self.extent], K_samples.size)
        K = CarryingCapacity(kind="table", K0=float(K_samples.mean()),
                             samples=K_samples)
        budget = Budget(C=self.C, M=self.M, T=self.T)
        plan = solve(K, grid, budget, params)
        self.n_features_in_ = 1
        self.plan_ = plan
        self.lambda_star_ = plan.lambda_star
        self.regime_ = plan.regime
        self.cost_ = plan.cost
        self.p0_ = plan.p0_star.values
        self.u0_ = plan.u0_star.values
        self.kkt_ = plan.kkt
        return self

    def predict(self, X):
        """Per-cell release density implied by the fitted multiplier.

        For horizons above the regime threshold the pointwise rule is
        ambiguous on part of the landscape; the upper selection is used,
        so predictions can exceed the budget-constrained fit there.
        """
        if not hasattr(self, "plan_"):
            raise RuntimeError("fit must be called before predict")
        K_samples = np.asarray(X, dtype=float)
        if K_samples.ndim == 2:
            K_samples = K_samples[:, 0]
        params = self._bio_params()
        flow = get_flow(params, self.T)
        K = CarryingCapacity(kind="table", K0=float(K_samples.mean()),
                             samples=K_samples)
        budget = Budget(C=self.C, M=self.M, T=self.T)
        if self.T <= flow.T0:
            grid = build_grid(1, [self.extent], max(K_samples.size, 2))
            p0 = psi_small_T(self.lambda_star_, K, grid, budget, params, flow)
        else:
            p0 = psi1_big_T(self.lambda_star_, K, budget, params, flow)
        return K_samples * rates.G_antideriv(p0, params)

    def score(self, X, y=None):
        """Negative plan cost (higher is better), for model-selection APIs."""
        params = self._bio_params()
        grid = build_grid(1, [self.extent], np.asarray(X).shape[0])
        K = CarryingCapacity(kind="table", K0=float(np.mean(X)),
                             samples=np.asarray(X, dtype=float).reshape(-1))
        plan = solve(K, grid, Budget(C=self.C, M=self.M, T=self.T), params)
        return -plan.cost
