"""Error metrics (bias, MAPE, MAE, RMSE, R^2) and the per-quantity report table."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import OdeModel
from .exceptions import SeriesError
from .series import DerivativeEstimate, TimeSeries

__all__ = ["MetricsRow", "MetricsReport", "compute_metrics", "error_table", "MAPE_EPS"]

MAPE_EPS = 1e-9


@dataclass(frozen=True)
class MetricsRow:
    """Error summary of ``predicted`` against ``observed``.

    ``bias`` is ``mean(predicted - observed)``.  MAPE is a fraction and
    skips points with ``|observed| <= MAPE_EPS``; ``mape_excluded`` counts
    them.  ``r2`` is NaN when the observed values are constant and ``mape``
    is NaN when every point was excluded.
    """

    quantity: str
    bias: float
    mape: float
    mae: float
    rmse: float
    r2: float
    n: int
    mape_excluded: int = 0

    @property
    def r2_defined(self) -> bool:
        return not math.isnan(self.r2)

    @property
    def mape_defined(self) -> bool:
        return not math.isnan(self.mape)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.bias, self.mape, self.mae, self.rmse, self.r2)


def compute_metrics(observed, predicted, quantity: str = "", eps_div: float = MAPE_EPS) -> MetricsRow:
    obs = np.asarray(observed, dtype=float).reshape(-1)
    pred = np.asarray(predicted, dtype=float).reshape(-1)
    if obs.shape != pred.shape:
        raise ValueError(f"length mismatch: {obs.size} observed vs {pred.size} predicted")
    if obs.size < 2:
        raise ValueError("need at least 2 points")
    if not (np.isfinite(obs).all() and np.isfinite(pred).all()):
        raise ValueError("metrics inputs must be finite")

    err = pred - obs
    bias = float(np.mean(err))
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))

    keep = np.abs(obs) > eps_div
    excluded = int(obs.size - np.count_nonzero(keep))
    mape = float(np.mean(np.abs(err[keep] / obs[keep]))) if keep.any() else math.nan

    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    ss_res = float(np.sum(err**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return MetricsRow(quantity, bias, mape, mae, rmse, r2, int(obs.size), excluded)


@dataclass
class MetricsReport:
    rows: list[MetricsRow]
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, quantity: str) -> MetricsRow:
        for row in self.rows:
            if row.quantity == quantity:
                return row
        raise KeyError(quantity)

    @property
    def quantities(self) -> list[str]:
        return [r.quantity for r in self.rows]

    def to_csv(self, comments: dict | None = None) -> str:
        buf = io.StringIO()
        for key, val in (comments or {}).items():
            buf.write(f"# {key}={val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "bias", "mape", "mae", "rmse", "r2"])
        for r in self.rows:
            w.writerow([r.quantity, *(repr(v) for v in r.as_tuple())])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "rows": [
                {
                    "quantity": r.quantity,
                    "bias": r.bias,
                    "mape": r.mape,
                    "mae": r.mae,
                    "rmse": r.rmse,
                    "r2": r.r2,
                    "n": r.n,
                    "mape_excluded": r.mape_excluded,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self, digits: int = 4) -> str:
        lines = ["| variable | bias | MAPE | MAE | RMSE | R2 |", "|---|---|---|---|---|---|"]
        for r in self.rows:
            vals = " | ".join(f"{v:.{digits}f}" for v in r.as_tuple())
            lines.append(f"| {r.quantity} | {vals} |")
        return "\n".join(lines) + "\n"


def error_table(
    model: OdeModel,
    data: TimeSeries,
    fitted: TimeSeries,
    deriv_obs: DerivativeEstimate,
    a_hat,
    metadata: dict | None = None,
) -> MetricsReport:
    """One row per state (data vs fitted trajectory) and per RHS component.

    The RHS rows compare ``deriv_obs`` with ``f_j(t_d, x_d, a_hat)``
    evaluated on the observed states, not on the refitted trajectory.
    """
    if data.n_samples != fitted.n_samples or not np.allclose(data.times, fitted.times, rtol=0, atol=1e-12):
        raise SeriesError("fitted trajectory is not sampled on the data grid")
    M = deriv_obs.n_rows
    if not np.allclose(deriv_obs.times, data.times[:M], rtol=0, atol=1e-12):
        raise SeriesError("derivative estimate is not aligned with the data grid")
    rows = [
        compute_metrics(data.values[:, k], fitted.values[:, k], quantity=label)
        for k, label in enumerate(data.labels)
    ]
    f_hat = np.asarray(model.rhs(data.times[:M], data.values[:M], np.asarray(a_hat, float)))
    rows += [
        compute_metrics(deriv_obs.dvalues[:, j], f_hat[:, j], quantity=f"f{j + 1}")
        for j in range(model.n_states)
    ]
    return MetricsReport(rows, dict(metadata or {}))
