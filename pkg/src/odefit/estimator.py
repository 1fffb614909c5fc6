"""scikit-learn style wrappers.

``X`` holds the sample times and ``y`` the observed states (one column per
state).  ``predict`` integrates the fitted model from the first observation,
so ``score`` is the R^2 of the fitted trajectory.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .baseline import BoundedProblem, NLSConfig, nls_fit
from .series import estimate_derivative
from .sim import rk4_path
from .solver import Method, SolverConfig, fit
from .validation import check_param_vector, check_series, check_times, resolve_model

__all__ = ["GradientMatchingRegressor", "TrajectoryNLSRegressor"]


class _TrajectoryMixin:
    def _store_grid(self, series, x0):
        self.t0_ = float(series.times[0])
        self.x0_ = np.asarray(series.values[0] if x0 is None else x0, dtype=float)
        spacing = float(np.min(np.diff(series.times)))
        self.max_dt_ = self.integrator_dt if self.integrator_dt is not None else spacing / 10.0
        self.n_features_in_ = 1

    def predict(self, X):
        """States of the fitted model at times ``X`` (all ``>=`` the first fitted time)."""
        check_is_fitted(self, "params_")
        t = check_times(X)
        if np.any(t < self.t0_):
            raise ValueError(f"cannot predict before the first observation time {self.t0_:g}")
        grid, inverse = np.unique(np.concatenate([[self.t0_], t]), return_inverse=True)
        path = rk4_path(self.model_, self.params_, self.x0_, grid, max_dt=self.max_dt_)
        return path[inverse[1:]]


class GradientMatchingRegressor(_TrajectoryMixin, RegressorMixin, BaseEstimator):
    """Fit ODE parameters by matching finite-difference derivatives to the RHS.

    Parameters mirror :class:`odefit.solver.SolverConfig`; ``model`` is a
    preset name or an :class:`OdeModel`.  ``x0`` fixes the initial state
    used by ``predict`` (default: the first observation).
    """

    def __init__(
        self,
        model="population",
        method="nr",
        derivative="forward",
        epsilon=1e-8,
        max_iters=20000,
        subset_r=None,
        damping=0.0,
        initial_params=None,
        random_state=0,
        x0=None,
        integrator_dt=None,
    ):
        self.model = model
        self.method = method
        self.derivative = derivative
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.subset_r = subset_r
        self.damping = damping
        self.initial_params = initial_params
        self.random_state = random_state
        self.x0 = x0
        self.integrator_dt = integrator_dt

    def fit(self, X, y):
        model = resolve_model(self.model)
        series = check_series(X, y, model)
        a0 = check_param_vector(self.initial_params, model)
        cfg = SolverConfig(
            method=Method(self.method),
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            subset_r=self.subset_r,
            seed=self.random_state,
            damping=self.damping,
        )
        result = fit(model, series, estimate_derivative(series, self.derivative), a0, cfg)
        self.model_ = model
        self.result_ = result
        self.params_ = np.asarray(result.params.values, dtype=float)
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self._store_grid(series, self.x0)
        return self


class TrajectoryNLSRegressor(_TrajectoryMixin, RegressorMixin, BaseEstimator):
    """Box-constrained least squares on the simulated trajectory."""

    def __init__(
        self,
        model="population",
        lower=-np.inf,
        upper=np.inf,
        initial_params=None,
        max_iters=100,
        ftol=1e-10,
        x0=None,
        integrator_dt=None,
    ):
        self.model = model
        self.lower = lower
        self.upper = upper
        self.initial_params = initial_params
        self.max_iters = max_iters
        self.ftol = ftol
        self.x0 = x0
        self.integrator_dt = integrator_dt

    def fit(self, X, y):
        model = resolve_model(self.model)
        series = check_series(X, y, model)
        a0 = check_param_vector(self.initial_params, model)
        self._store_grid(series, self.x0)
        problem = BoundedProblem.clipped(model, series, tuple(self.x0_), self.lower, self.upper, a0, self.max_dt_)
        result = nls_fit(problem, NLSConfig(max_iters=self.max_iters, ftol=self.ftol))
        self.model_ = model
        self.result_ = result
        self.params_ = np.asarray(result.params.values, dtype=float)
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        return self
