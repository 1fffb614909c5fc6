"""Stacked derivative-mismatch residuals and equation-subset sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ModelDomainError, SeriesError
from .model import OdeModel
from .series import DerivativeEstimate, TimeSeries

__all__ = ["ResidualSystem", "SubsetSelector", "assemble", "draw_subset"]


@dataclass(frozen=True)
class ResidualSystem:
    """Residual ``E`` and Jacobian ``dE/da`` over all used (sample, state) rows.

    Rows are ordered sample-major: every selected state of sample ``d``
    precedes sample ``d + 1``.  ``row_index[r] = (d, j)``.
    """

    residual: np.ndarray
    jacobian: np.ndarray
    row_index: np.ndarray
    states: tuple[int, ...]

    @property
    def n_rows(self) -> int:
        return self.residual.shape[0]

    @property
    def sse(self) -> float:
        return float(self.residual @ self.residual)

    @property
    def norm(self) -> float:
        return math.sqrt(self.sse)


@dataclass
class SubsetSelector:
    """Uniform sampler of ``r``-element subsets of the ``n`` ODE components.

    Indices are 0-based.  Every draw is uniform over all ``C(n, r)`` subsets
    and the sequence is fully determined by ``seed``.
    """

    n: int
    r: int
    seed: int | None = 0
    current: tuple[int, ...] = field(default=(), init=False)

    def __post_init__(self):
        if not 1 <= self.r <= self.n:
            raise ValueError(f"subset size r={self.r} must satisfy 1 <= r <= n={self.n}")
        self._rng = np.random.default_rng(self.seed)
        self.current = tuple(range(self.n)) if self.r == self.n else ()

    def draw(self) -> tuple[int, ...]:
        picked = self._rng.choice(self.n, size=self.r, replace=False)
        self.current = tuple(sorted(int(j) for j in picked))
        return self.current

    @property
    def n_subsets(self) -> int:
        return math.comb(self.n, self.r)


def draw_subset(selector: SubsetSelector) -> tuple[int, ...]:
    return selector.draw()


def _resolve_states(subset, n: int) -> tuple[int, ...]:
    if subset is None:
        return tuple(range(n))
    if isinstance(subset, SubsetSelector):
        if subset.n != n:
            raise ValueError(f"selector built for {subset.n} states, model has {n}")
        states = subset.current
        if not states:
            raise ValueError("selector has no drawn subset yet; call draw() first")
    else:
        states = tuple(sorted(set(int(j) for j in subset)))
    if not states or states[0] < 0 or states[-1] >= n:
        raise ValueError(f"subset {states} is not a non-empty subset of range({n})")
    return states


def assemble(
    model: OdeModel,
    series: TimeSeries,
    deriv: DerivativeEstimate,
    a,
    subset: SubsetSelector | Sequence[int] | None = None,
) -> ResidualSystem:
    """Build residual rows ``f_j(t_d, x_d, a) - x'_j(t_d)`` and their Jacobian.

    Only the first ``M = len(deriv)`` samples are used.  With a subset, rows
    of unselected states are dropped at every sample.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != model.n_params:
        raise ValueError(f"model {model.name!r} takes {model.n_params} parameters, got {a.size}")
    if series.n_states != model.n_states:
        raise SeriesError(
            f"series has {series.n_states} states but model {model.name!r} has {model.n_states}"
        )
    M = deriv.n_rows
    if M > series.n_samples or not np.array_equal(deriv.times, series.times[:M]):
        raise SeriesError("derivative estimate is not aligned with the series")
    states = _resolve_states(subset, model.n_states)

    t = series.times[:M]
    x = series.values[:M]
    try:
        f = np.asarray(model.rhs(t, x, a), dtype=float)
        J = np.asarray(model.param_jacobian(t, x, a), dtype=float)
    except ModelDomainError as exc:
        d = exc.index
        raise ModelDomainError(
            f"{exc} (sample d={d}, t={t[d] if d is not None else '?'})", index=d, state=exc.state
        ) from exc

    sel = list(states)
    residual = (f[:, sel] - deriv.dvalues[:, sel]).reshape(-1)
    jacobian = J[:, sel, :].reshape(-1, model.n_params)
    rows_d = np.repeat(np.arange(M), len(sel))
    rows_j = np.tile(np.asarray(sel), M)
    row_index = np.stack([rows_d, rows_j], axis=1)
    if not (np.isfinite(residual).all() and np.isfinite(jacobian).all()):
        bad = int(np.flatnonzero(~(np.isfinite(residual) & np.isfinite(jacobian).all(axis=1)))[0])
        d, j = row_index[bad]
        raise ModelDomainError(f"non-finite residual at sample d={d}, state j={j}", index=int(d), state=int(j))
    return ResidualSystem(residual, jacobian, row_index, states)
