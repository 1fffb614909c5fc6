"""ODE right-hand sides with parameter Jacobians, plus the three preset systems.

Model callables are vectorised: ``rhs(t, x, a)`` accepts ``x`` of shape
``(..., n)`` and ``a`` of shape ``(m,)`` or broadcastable ``(..., m)`` and
returns ``(..., n)``; ``param_jacobian`` returns ``(..., n, m)`` with entry
``[j, l] = d f_j / d a_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ModelDomainError, OdefitError

__all__ = [
    "OdeModel",
    "ParameterVector",
    "population_model",
    "lorenz_model",
    "activator_inhibitor_model",
    "finite_difference_jacobian",
    "check_param_jacobian",
    "get_model",
    "PRESET_MODELS",
]

RhsFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
SamplerFn = Callable[[np.random.Generator], tuple]


def _default_sampler(n, m):
    def sample(rng):
        return rng.uniform(0.0, 10.0), rng.uniform(-3.0, 3.0, n), rng.uniform(-3.0, 3.0, m)

    return sample


def finite_difference_jacobian(rhs: RhsFn, n_params: int, rel_step: float = 1e-6) -> RhsFn:
    """Central-difference parameter Jacobian for models without an analytic one."""

    def jac(t, x, a):
        a = np.asarray(a, dtype=float)
        cols = []
        for l in range(n_params):
            h = rel_step * (1.0 + np.abs(a[..., l]))
            e = np.zeros(n_params)
            e[l] = 1.0
            hp = np.asarray(h)[..., None] * e
            fp = rhs(t, x, a + hp)
            fm = rhs(t, x, a - hp)
            cols.append((fp - fm) / (2.0 * np.asarray(h)[..., None]))
        return np.stack(cols, axis=-1)

    return jac


@dataclass(frozen=True)
class OdeModel:
    """Right-hand side ``dx/dt = F(t, x, a)`` and its Jacobian in ``a``."""

    name: str
    n_states: int
    n_params: int
    rhs: RhsFn
    param_jacobian: RhsFn | None = None
    param_labels: tuple[str, ...] = ()
    state_labels: tuple[str, ...] = ()
    linear_in_params: bool = False
    sampler: SamplerFn | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_states < 1 or self.n_params < 1:
            raise ValueError("model needs at least one state and one parameter")
        if self.param_jacobian is None:
            object.__setattr__(
                self, "param_jacobian", finite_difference_jacobian(self.rhs, self.n_params)
            )
        if not self.param_labels:
            object.__setattr__(self, "param_labels", tuple(f"a{l + 1}" for l in range(self.n_params)))
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(f"x{k + 1}" for k in range(self.n_states)))
        if self.sampler is None:
            object.__setattr__(self, "sampler", _default_sampler(self.n_states, self.n_params))

    def __call__(self, t, x, a):
        return self.rhs(t, x, a)


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.isfinite(v).all():
            raise ValueError(f"parameter vector has non-finite entries: {v}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        labels = tuple(self.labels) or tuple(f"a{l + 1}" for l in range(v.size))
        if len(labels) != v.size:
            raise ValueError(f"{len(labels)} labels for {v.size} parameters")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def for_model(cls, model: OdeModel, values) -> "ParameterVector":
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.size != model.n_params:
            raise ValueError(f"model {model.name!r} takes {model.n_params} parameters, got {v.size}")
        return cls(v, model.param_labels)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.labels, self.values)}


def _split(x, a):
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    return x, a


# ---------------------------------------------------------------------------
# population system: linear in parameters, nonlinear in states


def _pop_rhs(t, x, a):
    x, a = _split(x, a)
    x1, x2 = x[..., 0], x[..., 1]
    f1 = a[..., 0] * x1 - a[..., 1] * x1 * x2
    f2 = a[..., 2] * x2 + a[..., 3] * x1 * x2 - a[..., 4] * x2**2
    return np.stack([f1, f2], axis=-1)


def _pop_jac(t, x, a):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    z = np.zeros_like(x1)
    row1 = np.stack([x1, -x1 * x2, z, z, z], axis=-1)
    row2 = np.stack([z, z, x2, x1 * x2, -(x2**2)], axis=-1)
    return np.stack([row1, row2], axis=-2)


def population_model() -> OdeModel:
    def sample(rng):
        return rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0, 2), rng.uniform(-5.0, 15.0, 5)

    return OdeModel(
        name="population",
        n_states=2,
        n_params=5,
        rhs=_pop_rhs,
        param_jacobian=_pop_jac,
        linear_in_params=True,
        sampler=sample,
    )


# ---------------------------------------------------------------------------
# Lorenz system


def _lorenz_rhs(t, x, a):
    x, a = _split(x, a)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    f1 = a[..., 0] * (x2 - x1)
    f2 = x1 * (a[..., 1] - x3) - x2
    f3 = x1 * x2 - a[..., 2] * x3
    return np.stack([f1, f2, f3], axis=-1)


def _lorenz_jac(t, x, a):
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    z = np.zeros_like(x1)
    return np.stack(
        [
            np.stack([x2 - x1, z, z], axis=-1),
            np.stack([z, x1, z], axis=-1),
            np.stack([z, z, -x3], axis=-1),
        ],
        axis=-2,
    )


def lorenz_model() -> OdeModel:
    def sample(rng):
        return rng.uniform(0.0, 5.0), rng.uniform(-20.0, 20.0, 3), rng.uniform(0.0, 30.0, 3)

    return OdeModel(
        name="lorenz",
        n_states=3,
        n_params=3,
        rhs=_lorenz_rhs,
        param_jacobian=_lorenz_jac,
        linear_in_params=True,
        sampler=sample,
    )


# ---------------------------------------------------------------------------
# activator-inhibitor system: nonlinear in parameters

_AI_BASAL = 0.0  # fixed basal inhibitor level, not estimated
_AI_DENOM_TOL = 1e-12


def _ai_denominator(x1, x2, a2):
    den = 1.0 + x1**2 + a2 * x2
    bad = np.abs(den) < _AI_DENOM_TOL
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        where = int(idx[0]) if idx.size else 0
        raise ModelDomainError(
            f"activator-inhibitor denominator vanishes at data row {where}", index=where, state=0
        )
    return den


def _ai_rhs(t, x, a):
    x, a = _split(x, a)
    x1, x2 = x[..., 0], x[..., 1]
    den = _ai_denominator(x1, x2, a[..., 1])
    f1 = (1.0 + a[..., 0] * x1**2) / den - x1
    f2 = a[..., 2] * (a[..., 3] * x1 + _AI_BASAL - x2)
    return np.stack([f1, f2], axis=-1)


def _ai_jac(t, x, a):
    x, a = _split(x, a)
    x1, x2 = x[..., 0], x[..., 1]
    a1, a2, a3, a4 = (a[..., l] for l in range(4))
    den = _ai_denominator(x1, x2, a2)
    z = np.zeros(np.broadcast_shapes(x1.shape, np.shape(a1)))
    row1 = np.stack(
        [x1**2 / den + z, -x2 * (1.0 + a1 * x1**2) / den**2 + z, z, z], axis=-1
    )
    row2 = np.stack([z, z, a4 * x1 - x2 + z, a3 * x1 + z], axis=-1)
    return np.stack([row1, row2], axis=-2)


def activator_inhibitor_model() -> OdeModel:
    def sample(rng):
        return rng.uniform(0.0, 50.0), rng.uniform(0.0, 3.0, 2), rng.uniform(0.05, 4.0, 4)

    return OdeModel(
        name="activator-inhibitor",
        n_states=2,
        n_params=4,
        rhs=_ai_rhs,
        param_jacobian=_ai_jac,
        linear_in_params=False,
        sampler=sample,
    )


PRESET_MODELS: dict[str, Callable[[], OdeModel]] = {
    "population": population_model,
    "lorenz": lorenz_model,
    "activator-inhibitor": activator_inhibitor_model,
}


def get_model(name: str) -> OdeModel:
    try:
        return PRESET_MODELS[name]()
    except KeyError:
        raise KeyError(
            f"unknown model {name!r}; available presets: {', '.join(PRESET_MODELS)}"
        ) from None


def check_param_jacobian(model: OdeModel, trials: int = 100, seed: int = 0) -> float:
    """Worst max-abs gap between the analytic and a central-difference Jacobian.

    Points are drawn with the model's own domain sampler; the difference
    step is ``1e-6 * (1 + |a_l|)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    numeric = finite_difference_jacobian(model.rhs, model.n_params)
    worst = 0.0
    for _ in range(trials):
        t, x, a = model.sampler(rng)
        J = np.asarray(model.param_jacobian(t, x, a))
        Jn = numeric(t, x, a)
        if not (np.isfinite(J).all() and np.isfinite(Jn).all()):
            raise OdefitError(f"non-finite model output while probing at x={x}, a={a}")
        worst = max(worst, float(np.max(np.abs(J - Jn))))
    return worst


def superposition_gap(model: OdeModel, t, x, a: Sequence[float], b: Sequence[float], alpha=0.7, beta=-1.3) -> float:
    """Deviation of ``rhs(a) - rhs(0)`` from linearity in ``a``; zero for linear-in-parameter models."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    zero = np.zeros_like(a)
    base = model.rhs(t, x, zero)
    lhs = model.rhs(t, x, alpha * a + beta * b) - base
    rhs = alpha * (model.rhs(t, x, a) - base) + beta * (model.rhs(t, x, b) - base)
    return float(np.max(np.abs(lhs - rhs)))
