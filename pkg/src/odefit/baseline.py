"""Box-constrained trajectory least squares (the comparison baseline).

Minimises ``sum (x_sim(t_d; a) - x_d)^2`` over ``lower <= a <= upper`` with a
projected Levenberg-Marquardt iteration.  Sensitivities come from forward
differences of the simulation, all columns integrated in one batched RK4
pass.  A trial point is accepted only if it lowers the SSE, so accepted
iterates are monotone and always inside the box.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, IntegrationError, ModelDomainError
from .model import OdeModel, ParameterVector
from .series import TimeSeries
from .sim import rk4_path
from .solver import FitResult, Termination, TraceRecord

__all__ = ["BoundedProblem", "NLSConfig", "nls_fit", "project"]

_FD_REL = 1e-6


def project(a, lower, upper) -> np.ndarray:
    return np.minimum(np.maximum(np.asarray(a, float), lower), upper)


@dataclass(frozen=True)
class BoundedProblem:
    model: OdeModel
    data: TimeSeries
    x0: tuple[float, ...]
    lower: np.ndarray
    upper: np.ndarray
    a0: np.ndarray
    max_dt: float | None = None

    def __post_init__(self):
        m = self.model.n_params
        lower = np.broadcast_to(np.asarray(self.lower, float), (m,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, float), (m,)).copy()
        a0 = np.asarray(self.a0, float).reshape(-1)
        if a0.size != m:
            raise ConfigError(f"a0 has {a0.size} entries, model takes {m}")
        if np.any(lower > upper):
            raise ConfigError("lower bound exceeds upper bound")
        if np.any(a0 < lower) or np.any(a0 > upper):
            raise ConfigError(f"a0={a0.tolist()} lies outside the bounds")
        if len(self.x0) != self.model.n_states:
            raise ConfigError(f"x0 has {len(self.x0)} entries, model has {self.model.n_states} states")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @classmethod
    def clipped(cls, model, data, x0, lower, upper, a0, max_dt=None) -> "BoundedProblem":
        """Build a problem after projecting ``a0`` into the box."""
        m = model.n_params
        lo = np.broadcast_to(np.asarray(lower, float), (m,))
        hi = np.broadcast_to(np.asarray(upper, float), (m,))
        return cls(model, data, x0, lo, hi, project(a0, lo, hi), max_dt)


@dataclass(frozen=True)
class NLSConfig:
    max_iters: int = 100
    ftol: float = 1e-10
    xtol: float = 1e-10
    lam0: float = 1e-3
    lam_max: float = 1e12


def _residual(problem: BoundedProblem, a: np.ndarray) -> np.ndarray:
    path = rk4_path(problem.model, a, problem.x0, problem.data.times, max_dt=problem.max_dt)
    return (path - problem.data.values).reshape(-1)


def _jacobian(problem: BoundedProblem, a: np.ndarray, r: np.ndarray) -> np.ndarray:
    m = a.size
    h = _FD_REL * (1.0 + np.abs(a))
    # step inward when the forward point would leave the box
    sign = np.where(a + h > problem.upper, -1.0, 1.0)
    pts = a + np.diag(sign * h)
    try:
        paths = rk4_path(problem.model, pts, problem.x0, problem.data.times, max_dt=problem.max_dt)
        cols = [(paths[:, l, :] - problem.data.values).reshape(-1) for l in range(m)]
    except (IntegrationError, ModelDomainError):
        cols = []
        for l in range(m):
            try:
                cols.append(_residual(problem, pts[l]))
            except (IntegrationError, ModelDomainError):
                pts[l, l] = a[l] - sign[l] * h[l]
                sign[l] = -sign[l]
                cols.append(_residual(problem, pts[l]))
    return np.stack([(c - r) / (sign[l] * h[l]) for l, c in enumerate(cols)], axis=1)


def nls_fit(problem: BoundedProblem, cfg: NLSConfig | None = None) -> FitResult:
    cfg = cfg or NLSConfig()
    model = problem.model
    lo, hi = problem.lower, problem.upper
    a = problem.a0.copy()
    initial = tuple(a.tolist())
    start = time.perf_counter()
    r = _residual(problem, a)
    sse = float(r @ r)
    lam = cfg.lam0
    trace: list[TraceRecord] = []
    termination = Termination.MAX_ITERS
    message = ""

    for it in range(1, cfg.max_iters + 1):
        if sse == 0.0:
            termination = Termination.TOLERANCE_MET
            break
        J = _jacobian(problem, a, r)
        g = J.T @ r
        A = J.T @ J
        scale = np.maximum(np.diag(A), 1e-12 * max(1.0, float(np.max(np.diag(A)))))
        accepted = False
        failures = 0
        while lam <= cfg.lam_max:
            try:
                s = np.linalg.solve(A + lam * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            a_try = project(a + s, lo, hi)
            try:
                r_try = _residual(problem, a_try)
            except (IntegrationError, ModelDomainError):
                failures += 1
                lam *= 10.0
                continue
            sse_try = float(r_try @ r_try)
            if sse_try < sse:
                accepted = True
                break
            lam *= 10.0

        if not accepted:
            termination = Termination.STATIONARY_STEP
            message = f"no decreasing step at iteration {it}"
            if failures:
                message += f" ({failures} trial integrations blew up)"
            break

        step = float(np.max(np.abs(a_try - a)))
        trace.append(TraceRecord(it, tuple(a_try.tolist()), math.sqrt(sse), step, lam))
        rel_drop = (sse - sse_try) / sse if sse > 0 else 0.0
        a, r, sse = a_try, r_try, sse_try
        lam = max(lam / 10.0, 1e-15)
        if rel_drop <= cfg.ftol or step <= cfg.xtol * (1.0 + float(np.max(np.abs(a)))):
            termination = Termination.TOLERANCE_MET
            break

    return FitResult(
        params=ParameterVector.for_model(model, a),
        iterations=len(trace),
        converged=termination in (Termination.TOLERANCE_MET, Termination.STATIONARY_STEP),
        termination=termination,
        trace=trace,
        wall_time=time.perf_counter() - start,
        method="nls",
        initial=initial,
        message=message,
        final_residual_norm=math.sqrt(sse),
    )
