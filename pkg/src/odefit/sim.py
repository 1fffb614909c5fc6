"""Fixed-step RK4 integration and synthetic noisy datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, IntegrationError
from .model import OdeModel, get_model
from .series import TimeSeries

__all__ = [
    "SimSpec",
    "rk4_path",
    "rk4_integrate",
    "simulate_fit",
    "generate_dataset",
    "generate_pair",
    "uniform_grid",
]


def _substeps(dt_interval: np.ndarray, max_dt: float | None, substeps: int) -> np.ndarray:
    if max_dt is None:
        return np.full(dt_interval.shape, substeps, dtype=int)
    return np.maximum(1, np.ceil(dt_interval / max_dt - 1e-9).astype(int))


def rk4_path(
    model: OdeModel,
    a,
    x0,
    t_grid,
    max_dt: float | None = None,
    substeps: int = 10,
) -> np.ndarray:
    """Integrate with classical RK4 and return the states at ``t_grid`` nodes.

    Each grid interval is split into equal internal steps: ``ceil(dt/max_dt)``
    of them when ``max_dt`` is given, otherwise ``substeps``.  ``a`` and
    ``x0`` may carry a leading batch axis, in which case the result has
    shape ``(len(t_grid), batch, n)``; otherwise ``(len(t_grid), n)``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if t_grid.size > 1 and not np.all(np.diff(t_grid) > 0):
        raise ValueError("t_grid must be strictly increasing")
    a = np.asarray(a, dtype=float)
    x = np.array(x0, dtype=float)
    if x.shape[-1] != model.n_states:
        raise ValueError(f"x0 has {x.shape[-1]} entries, model has {model.n_states} states")
    if a.ndim > 1 and x.ndim == 1:
        x = np.broadcast_to(x, a.shape[:-1] + x.shape).copy()
    rhs = model.rhs
    out = np.empty((t_grid.size,) + x.shape)
    out[0] = x
    steps = _substeps(np.diff(t_grid), max_dt, substeps)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(t_grid.size - 1):
            t0 = t_grid[k]
            s = int(steps[k])
            h = (t_grid[k + 1] - t0) / s
            for i in range(s):
                t = t0 + i * h
                k1 = rhs(t, x, a)
                k2 = rhs(t + 0.5 * h, x + (0.5 * h) * k1, a)
                k3 = rhs(t + 0.5 * h, x + (0.5 * h) * k2, a)
                k4 = rhs(t + h, x + h * k3, a)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(x).all():
                raise IntegrationError(
                    f"state became non-finite between t={t0:g} and t={t_grid[k + 1]:g}",
                    time=float(t_grid[k + 1]),
                )
            out[k + 1] = x
    return out


def rk4_integrate(model: OdeModel, a, x0, t_grid, max_dt: float | None = None, substeps: int = 10) -> TimeSeries:
    path = rk4_path(model, a, x0, t_grid, max_dt, substeps)
    return TimeSeries(np.asarray(t_grid, dtype=float), path, model.state_labels)


def simulate_fit(model: OdeModel, a_hat, x0, t_grid, max_dt: float | None = None, substeps: int = 10) -> TimeSeries:
    """Trajectory of the fitted model; the curve compared against data."""
    return rk4_integrate(model, a_hat, x0, t_grid, max_dt, substeps)


def uniform_grid(t_span: Sequence[float], n_points: int) -> np.ndarray:
    return np.linspace(float(t_span[0]), float(t_span[1]), int(n_points))


@dataclass(frozen=True)
class SimSpec:
    """Recipe for a synthetic dataset.

    Noise is either absolute per-state ``noise_std`` or, when ``noise_rel``
    is set, ``noise_rel`` times the per-state standard deviation of the
    clean trajectory.  ``integrator_dt`` defaults to a tenth of the grid
    spacing.
    """

    model: str
    true_params: tuple[float, ...]
    x0: tuple[float, ...]
    t_span: tuple[float, float]
    n_points: int
    integrator_dt: float | None = None
    noise_std: tuple[float, ...] | None = None
    noise_rel: float | None = None
    seed: int | None = 0

    def __post_init__(self):
        object.__setattr__(self, "true_params", tuple(float(v) for v in self.true_params))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "t_span", (float(self.t_span[0]), float(self.t_span[1])))
        if self.noise_std is not None:
            object.__setattr__(self, "noise_std", tuple(float(v) for v in self.noise_std))
        if not self.t_span[1] > self.t_span[0]:
            raise ConfigError("t_span end must exceed start")
        if int(self.n_points) < 3:
            raise ConfigError("n_points must be >= 3")
        spacing = (self.t_span[1] - self.t_span[0]) / (self.n_points - 1)
        if self.integrator_dt is not None and not 0 < self.integrator_dt <= spacing * (1 + 1e-12):
            raise ConfigError(f"integrator_dt must be in (0, {spacing:g}]")
        if self.noise_std is not None and any(s < 0 for s in self.noise_std):
            raise ConfigError("noise_std entries must be >= 0")
        if self.noise_rel is not None and self.noise_rel < 0:
            raise ConfigError("noise_rel must be >= 0")
        if self.noise_std is not None and self.noise_rel is not None:
            raise ConfigError("give either noise_std or noise_rel, not both")

    @property
    def spacing(self) -> float:
        return (self.t_span[1] - self.t_span[0]) / (self.n_points - 1)

    @property
    def max_dt(self) -> float:
        return self.integrator_dt if self.integrator_dt is not None else self.spacing / 10.0

    def grid(self) -> np.ndarray:
        return uniform_grid(self.t_span, self.n_points)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "true_params": list(self.true_params),
            "x0": list(self.x0),
            "t_span": list(self.t_span),
            "n_points": self.n_points,
            "integrator_dt": self.integrator_dt,
            "noise_std": None if self.noise_std is None else list(self.noise_std),
            "noise_rel": self.noise_rel,
            "seed": self.seed,
        }


def generate_pair(spec: SimSpec, model: OdeModel | None = None) -> tuple[TimeSeries, TimeSeries]:
    """Return ``(noisy, clean)`` series for ``spec``."""
    model = model or get_model(spec.model)
    grid = spec.grid()
    clean = rk4_integrate(model, spec.true_params, spec.x0, grid, max_dt=spec.max_dt)
    if spec.noise_rel is not None:
        std = spec.noise_rel * clean.values.std(axis=0)
    elif spec.noise_std is not None:
        std = np.broadcast_to(np.asarray(spec.noise_std, float), (model.n_states,))
    else:
        std = np.zeros(model.n_states)
    if not np.any(std > 0):
        return clean, clean
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(clean.values.shape) * std
    return TimeSeries(grid, clean.values + noise, clean.labels), clean


def generate_dataset(spec: SimSpec, model: OdeModel | None = None) -> TimeSeries:
    return generate_pair(spec, model)[0]
