"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import ConfigError, SeriesError
from .model import OdeModel, get_model
from .series import TimeSeries


def resolve_model(model) -> OdeModel:
    if isinstance(model, OdeModel):
        return model
    if isinstance(model, str):
        try:
            return get_model(model)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
    raise ConfigError(f"model must be a preset name or an OdeModel, got {type(model).__name__}")


def check_times(X) -> np.ndarray:
    """Accept times as shape (N,) or (N, 1); return a 1-D float array."""
    t = np.asarray(X, dtype=float)
    if t.ndim == 2 and t.shape[1] == 1:
        t = t[:, 0]
    t = check_array(t, ensure_2d=False, dtype=float)
    if t.ndim != 1:
        raise SeriesError(f"times must be 1-D or a single column, got shape {np.shape(X)}")
    return t


def check_series(X, y, model: OdeModel) -> TimeSeries:
    t = check_times(X)
    Y = check_array(y, ensure_2d=False, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    check_consistent_length(t, Y)
    if Y.shape[1] != model.n_states:
        raise SeriesError(f"y has {Y.shape[1]} columns, model {model.name!r} has {model.n_states} states")
    return TimeSeries(t, Y, model.state_labels)


def check_param_vector(values, model: OdeModel, name: str = "initial_params") -> np.ndarray:
    if values is None:
        return np.zeros(model.n_params)
    a = np.asarray(values, dtype=float).reshape(-1)
    if a.size != model.n_params:
        raise ConfigError(f"{name} has {a.size} entries, model {model.name!r} takes {model.n_params}")
    if not np.isfinite(a).all():
        raise ConfigError(f"{name} must be finite")
    return a
