"""Newton-Raphson and gradient-descent iterations on the residual system.

The four methods share one loop.  NR and SNR take Gauss-Newton steps
``a - (J^T J + damping I)^{-1} J^T E`` solved through a pivoted QR of ``J``;
GD and SGD step along ``-J^T G`` with the explicit step size
``eta = (delta^T G) / (delta^T delta)``, ``delta = J J^T G``, which makes
``||G||^2`` non-increasing whenever the residual is affine in ``a``.
The stochastic variants redraw a uniform subset of ODE components every
iteration and use only those rows.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from .exceptions import ConfigError, ModelDomainError, SingularSystemError
from .model import OdeModel, ParameterVector
from .residual import ResidualSystem, SubsetSelector, assemble
from .series import DerivativeEstimate, TimeSeries

__all__ = [
    "Method",
    "Termination",
    "SolverConfig",
    "TraceRecord",
    "FitResult",
    "ConvergenceEstimate",
    "nr_step",
    "gd_step_size",
    "nr_fit",
    "snr_fit",
    "gd_fit",
    "sgd_fit",
    "fit",
    "empirical_convergence_order",
]

_STATIONARY_TOL = 1e-300


class Method(str, Enum):
    NR = "nr"
    SNR = "snr"
    GD = "gd"
    SGD = "sgd"

    @property
    def stochastic(self) -> bool:
        return self in (Method.SNR, Method.SGD)

    @property
    def newton(self) -> bool:
        return self in (Method.NR, Method.SNR)


class Termination(str, Enum):
    TOLERANCE_MET = "ToleranceMet"
    MAX_ITERS = "MaxIters"
    SINGULAR_SYSTEM = "SingularSystem"
    STATIONARY_STEP = "StationaryStep"
    NON_FINITE_ITERATE = "NonFiniteIterate"


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.NR
    epsilon: float = 1e-8
    max_iters: int = 20000
    subset_r: int | None = None
    seed: int | None = 0
    damping: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", Method(self.method))
        except ValueError:
            raise ConfigError(
                f"unknown method {self.method!r}; expected one of {[m.value for m in Method]}"
            ) from None
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if int(self.max_iters) < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.damping < 0:
            raise ConfigError("damping must be non-negative")
        if self.method.stochastic and self.subset_r is None:
            raise ConfigError(f"method {self.method.value!r} requires subset_r")
        if not self.method.stochastic and self.subset_r is not None:
            raise ConfigError(f"subset_r only applies to snr/sgd, not {self.method.value!r}")


@dataclass(frozen=True)
class TraceRecord:
    """One iteration: parameters after the update and diagnostics before it."""

    iteration: int
    params: tuple[float, ...]
    residual_norm: float
    step: float
    eta: float | None = None
    subset: tuple[int, ...] | None = None


@dataclass
class FitResult:
    params: ParameterVector
    iterations: int
    converged: bool
    termination: Termination
    trace: list[TraceRecord] = field(default_factory=list)
    wall_time: float = 0.0
    method: str = ""
    initial: tuple[float, ...] = ()
    message: str = ""
    final_residual_norm: float = math.nan

    def iterates(self, include_initial: bool = True) -> np.ndarray:
        rows = [r.params for r in self.trace]
        if include_initial and self.initial:
            rows = [self.initial, *rows]
        return np.array(rows, dtype=float).reshape(len(rows), -1)

    def residual_norms(self) -> np.ndarray:
        norms = [r.residual_norm for r in self.trace]
        if not math.isnan(self.final_residual_norm):
            norms.append(self.final_residual_norm)
        return np.array(norms)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "method": self.method,
            "params": self.params.as_dict(),
            "initial": list(self.initial),
            "iterations": self.iterations,
            "converged": self.converged,
            "termination": self.termination.value,
            "message": self.message,
            "final_residual_norm": self.final_residual_norm,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, include_timing: bool = True, extra: dict | None = None) -> str:
        doc = dict(extra or {})
        doc.update(self.to_dict(include_timing))
        doc["trace"] = [
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(r).items()}
            for r in self.trace
        ]
        return json.dumps(doc, indent=2, allow_nan=True) + "\n"

    def trace_csv(self, comments: dict | None = None) -> str:
        buf = io.StringIO()
        for key, val in (comments or {}).items():
            buf.write(f"# {key}={val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", *self.params.labels, "residual_norm", "step", "eta", "subset"])
        for r in self.trace:
            w.writerow(
                [
                    r.iteration,
                    *(repr(v) for v in r.params),
                    repr(r.residual_norm),
                    repr(r.step),
                    "" if r.eta is None else repr(r.eta),
                    "" if r.subset is None else " ".join(str(j) for j in r.subset),
                ]
            )
        return buf.getvalue()


# ---------------------------------------------------------------------------
# single steps


def nr_step(system: ResidualSystem, a, damping: float = 0.0) -> np.ndarray:
    """Gauss-Newton update ``a - (J^T J + damping I)^{-1} J^T E``.

    Solved as the least-squares problem ``min ||J s + E||`` (augmented with
    ``sqrt(damping) I`` rows) through a column-pivoted QR factorisation.
    """
    a = np.asarray(a, dtype=float)
    J = system.jacobian
    E = system.residual
    m = J.shape[1]
    if damping > 0:
        J = np.vstack([J, math.sqrt(damping) * np.eye(m)])
        E = np.concatenate([E, np.zeros(m)])
    if J.shape[0] == 0:
        raise SingularSystemError("empty residual system", rank=0, subset=system.states)
    Q, R, perm = qr(J, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(J.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.count_nonzero(diag > tol))
    if rank < m:
        raise SingularSystemError(
            f"Jacobian rank {rank} < {m} parameters for states {system.states}",
            rank=rank,
            subset=system.states,
        )
    z = solve_triangular(R, Q.T @ E)
    step = np.empty(m)
    step[perm] = z
    return a - step


def gd_step_size(system: ResidualSystem) -> float:
    """Explicit step ``(delta^T G)/(delta^T delta)`` with ``delta = J J^T G``.

    Returns exactly ``0.0`` at a stationary point (``delta^T delta`` below
    1e-300), which the GD loop reports as ``StationaryStep``.
    """
    J = system.jacobian
    G = system.residual
    v = J.T @ G
    delta = J @ v
    dd = float(delta @ delta)
    if dd < _STATIONARY_TOL:
        return 0.0
    return float(delta @ G) / dd


# ---------------------------------------------------------------------------
# iteration loop


def _as_array(a0, model: OdeModel) -> np.ndarray:
    a = np.array(a0, dtype=float).reshape(-1)
    if a.size != model.n_params:
        raise ConfigError(f"model {model.name!r} takes {model.n_params} parameters, got {a.size}")
    return a


def _run(model, series, deriv, a0, cfg: SolverConfig) -> FitResult:
    a = _as_array(a0, model)
    initial = tuple(float(v) for v in a)
    n = model.n_states
    selector = SubsetSelector(n, cfg.subset_r, cfg.seed) if cfg.method.stochastic else None
    all_states = frozenset(range(n))
    covered: set[int] = set()
    trace: list[TraceRecord] = []
    termination = Termination.MAX_ITERS
    message = ""
    final_norm = math.nan
    start = time.perf_counter()

    for it in range(1, int(cfg.max_iters) + 1):
        subset = selector.draw() if selector is not None else None
        try:
            system = assemble(model, series, deriv, a, subset)
        except ModelDomainError as exc:
            termination, message = Termination.NON_FINITE_ITERATE, f"iteration {it}: {exc}"
            break
        norm = system.norm

        eta = None
        if cfg.method.newton:
            try:
                a_new = nr_step(system, a, cfg.damping)
            except SingularSystemError as exc:
                termination = Termination.SINGULAR_SYSTEM
                message = f"iteration {it}, subset {system.states}: {exc}"
                break
        else:
            eta = gd_step_size(system)
            if eta == 0.0:
                trace.append(TraceRecord(it, tuple(a.tolist()), norm, 0.0, 0.0, subset))
                termination = Termination.STATIONARY_STEP
                message = f"stationary point at iteration {it}"
                break
            a_new = a - eta * (system.jacobian.T @ system.residual)

        if not np.isfinite(a_new).all():
            termination = Termination.NON_FINITE_ITERATE
            message = f"non-finite iterate at iteration {it}: {a_new.tolist()}"
            break

        change = float(np.max(np.abs(a_new - a)))
        trace.append(TraceRecord(it, tuple(a_new.tolist()), norm, change, eta, subset))
        a = a_new

        if change <= cfg.epsilon:
            if selector is None:
                termination = Termination.TOLERANCE_MET
                break
            # a small step only certifies the drawn equations; require every
            # component to have been checked before stopping
            covered.update(subset)
            if covered == all_states:
                termination = Termination.TOLERANCE_MET
                break
        else:
            covered.clear()

    wall = time.perf_counter() - start
    try:
        final_norm = assemble(model, series, deriv, a).norm
    except ModelDomainError:
        pass
    converged = termination in (Termination.TOLERANCE_MET, Termination.STATIONARY_STEP)
    return FitResult(
        params=ParameterVector.for_model(model, a),
        iterations=len(trace),
        converged=converged,
        termination=termination,
        trace=trace,
        wall_time=wall,
        method=cfg.method.value,
        initial=initial,
        message=message,
        final_residual_norm=final_norm,
    )


def _checked(cfg: SolverConfig, *allowed: Method) -> SolverConfig:
    if cfg.method not in allowed:
        raise ConfigError(f"config method {cfg.method.value!r} not valid here")
    return cfg


def nr_fit(model: OdeModel, series: TimeSeries, deriv: DerivativeEstimate, a0, cfg: SolverConfig | None = None) -> FitResult:
    cfg = _checked(cfg or SolverConfig(Method.NR), Method.NR)
    return _run(model, series, deriv, a0, cfg)


def snr_fit(model, series, deriv, a0, cfg: SolverConfig) -> FitResult:
    """Stochastic NR: each iteration solves only a random subset of ``subset_r`` equations.

    Subset Jacobians are often rank deficient (e.g. a single Lorenz
    equation involves one parameter); pass ``damping > 0`` in that case.
    """
    return _run(model, series, deriv, a0, _checked(cfg, Method.SNR))


def gd_fit(model, series, deriv, a0, cfg: SolverConfig | None = None) -> FitResult:
    cfg = _checked(cfg or SolverConfig(Method.GD), Method.GD)
    return _run(model, series, deriv, a0, cfg)


def sgd_fit(model, series, deriv, a0, cfg: SolverConfig) -> FitResult:
    return _run(model, series, deriv, a0, _checked(cfg, Method.SGD))


def fit(model, series, deriv, a0, cfg: SolverConfig) -> FitResult:
    """Dispatch on ``cfg.method``."""
    return _run(model, series, deriv, a0, cfg)


# ---------------------------------------------------------------------------
# convergence diagnostics


@dataclass(frozen=True)
class ConvergenceEstimate:
    order: float | None
    tail_ratio: float | None
    one_step: bool
    n_pairs: int


def _errors(trace, a_star) -> np.ndarray:
    if isinstance(trace, FitResult):
        pts = trace.iterates(include_initial=True)
    else:
        pts = np.array([r.params if isinstance(r, TraceRecord) else r for r in trace], dtype=float)
    return np.max(np.abs(pts - a_star), axis=1)


def _qualifying_pairs(err: np.ndarray, floor: float, near: float, window: int):
    """Pairs ``(e_i, e_{i+1})`` from the final strictly decreasing run above ``floor``."""
    above = np.flatnonzero(err > floor)
    if above.size == 0:
        return None, None, 0
    end = int(above[-1])
    start = end
    while start > 0 and err[start - 1] > err[start]:
        start -= 1
    run = err[start : end + 1]
    if run.size < 2:
        return None, None, run.size
    x, y = run[:-1], run[1:]
    close = x <= near
    if np.count_nonzero(close) >= 2:
        x, y = x[close], y[close]
    else:
        x, y = x[-window:], y[-window:]
    return np.log(x), np.log(y), run.size


def empirical_convergence_order(
    trace, a_star, *, floor: float | None = None, near: float = 0.1, window: int = 3
) -> ConvergenceEstimate:
    """Observed convergence order of iterates towards ``a_star``.

    ``trace`` is a FitResult, a list of them (pairs are pooled), or a
    sequence of iterates.  Errors are ``e_i = ||a_i - a*||_inf`` relative
    to ``scale = max(1, ||a*||_inf)``.  Iterates at or below the round-off
    floor (default ``1e-10 * scale``) are ignored.  From the final strictly
    decreasing run, the pairs with ``e_i <= near * scale`` are used when at
    least two exist, otherwise the last ``window`` pairs.  ``order`` is the
    least-squares slope of ``log e_{i+1}`` on ``log e_i`` and
    ``tail_ratio`` the geometric mean of ``e_{i+1} / e_i``.  A run whose
    first step lands on ``a*`` reports ``one_step=True`` and no order.
    """
    a_star = np.asarray(a_star, dtype=float)
    scale = max(1.0, float(np.max(np.abs(a_star))))
    floor = 1e-10 * scale if floor is None else floor
    traces = trace if isinstance(trace, list) and trace and isinstance(trace[0], FitResult) else [trace]

    xs, ys = [], []
    longest = 0
    for tr in traces:
        err = _errors(tr, a_star)
        if len(traces) == 1 and err.size >= 2 and err[0] > floor and np.all(err[1:] <= floor):
            return ConvergenceEstimate(None, None, True, 0)
        x, y, run = _qualifying_pairs(err, floor, near * scale, window)
        longest = max(longest, run)
        if x is not None:
            xs.append(x)
            ys.append(y)
    if len(traces) == 1 and longest < 4:
        raise ValueError(f"need >= 4 strictly decreasing iterates above {floor:g}, found {longest}")
    if not xs or sum(v.size for v in xs) < 2:
        raise ValueError("not enough qualifying iterate pairs to fit an order")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    slope = float(np.polyfit(x, y, 1)[0])
    ratio = float(np.exp(np.mean(y - x)))
    return ConvergenceEstimate(slope, ratio, False, int(x.size))


def with_method(cfg: SolverConfig, method, subset_r: int | None = None) -> SolverConfig:
    """Copy of ``cfg`` retargeted to another method."""
    method = Method(method)
    return replace(cfg, method=method, subset_r=subset_r if method.stochastic else None)
