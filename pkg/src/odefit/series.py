"""Time-series containers, file I/O and finite-difference derivative estimators.

Both estimators drop trailing samples instead of inventing one-sided boundary
formulas, so a derivative estimate of length ``M`` is aligned with the first
``M`` samples of its source series.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DegenerateGridError, SeriesError

__all__ = [
    "DerivativeMethod",
    "TimeSeries",
    "DerivativeEstimate",
    "load_series",
    "save_series",
    "dumps_series",
    "forward_difference",
    "three_point_derivative",
    "second_derivative_estimate",
    "estimate_derivative",
    "lipschitz_diagnostic",
]

# relative guard on the three-point denominator, in units of machine epsilon
_DENOM_RTOL = 1e3 * np.finfo(float).eps


class DerivativeMethod(str, Enum):
    FORWARD = "forward"
    THREE_POINT = "three-point"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Samples ``values[d, k]`` of state ``k`` at ``times[d]``.

    Times must be strictly increasing and every value finite.  Arrays are
    copied and marked read-only on construction.
    """

    times: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1:
            raise SeriesError(f"times must be one-dimensional, got shape {times.shape}")
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise SeriesError(f"values must be two-dimensional, got shape {values.shape}")
        if values.shape[0] != times.shape[0]:
            raise SeriesError(
                f"times has {times.shape[0]} rows but values has {values.shape[0]}"
            )
        if values.shape[1] < 1:
            raise SeriesError("series needs at least one state column")
        if times.shape[0] < 2:
            raise SeriesError(f"series needs at least 2 rows, got {times.shape[0]}")

        bad_t = np.flatnonzero(~np.isfinite(times))
        if bad_t.size:
            raise SeriesError(f"non-finite time at row {bad_t[0] + 1}", row=int(bad_t[0]) + 1)
        bad_v = np.flatnonzero(~np.isfinite(values).all(axis=1))
        if bad_v.size:
            raise SeriesError(f"non-finite value at row {bad_v[0] + 1}", row=int(bad_v[0]) + 1)
        steps = np.diff(times)
        bad_step = np.flatnonzero(~(steps > 0))
        if bad_step.size:
            row = int(bad_step[0]) + 2
            raise SeriesError(f"non-increasing times at row {row}", row=row)

        labels = tuple(str(s) for s in self.labels) if self.labels else tuple(
            f"x{k + 1}" for k in range(values.shape[1])
        )
        if len(labels) != values.shape[1]:
            raise SeriesError(
                f"{len(labels)} labels given for {values.shape[1]} state columns"
            )
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.times.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_samples

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.labels == other.labels
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # mutable-looking arrays; equality is by value


@dataclass(frozen=True)
class DerivativeEstimate:
    """Estimated first derivatives ``dvalues[d] ~ x'(times[d])``."""

    times: np.ndarray
    dvalues: np.ndarray
    method: DerivativeMethod = DerivativeMethod.FORWARD
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        dvalues = np.asarray(self.dvalues, dtype=float)
        if dvalues.ndim == 1:
            dvalues = dvalues[:, None]
        if dvalues.shape[0] != np.asarray(self.times).shape[0]:
            raise SeriesError("derivative times and values disagree in length")
        if not np.isfinite(dvalues).all():
            raise SeriesError("derivative estimate contains non-finite entries")
        object.__setattr__(self, "times", _frozen(self.times))
        object.__setattr__(self, "dvalues", _frozen(dvalues))
        object.__setattr__(self, "method", DerivativeMethod(self.method))

    @property
    def n_rows(self) -> int:
        return self.times.shape[0]


# ---------------------------------------------------------------------------
# file formats


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SeriesError(f"cannot parse {text!r} in column {col!r} at row {row}", row=row) from None


def _series_from_rows(header: Sequence[str], rows: Iterable[Sequence[str]]) -> TimeSeries:
    if len(header) < 2:
        raise SeriesError("header must name a time column and at least one state")
    times, values = [], []
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise SeriesError(
                f"row {i} has {len(row)} fields, expected {len(header)}", row=i
            )
        times.append(_parse_float(row[0], i, header[0]))
        values.append([_parse_float(v, i, h) for v, h in zip(row[1:], header[1:])])
    if len(times) < 2:
        raise SeriesError(f"series needs at least 2 rows, got {len(times)}")
    return TimeSeries(np.array(times), np.array(values), tuple(h.strip() for h in header[1:]))


def _read_csv(text: str) -> TimeSeries:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SeriesError("empty CSV file") from None
    return _series_from_rows([h.strip() for h in header], [[c.strip() for c in r] for r in reader])


def _read_json(text: str) -> TimeSeries:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SeriesError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "times" not in doc or "values" not in doc:
        raise SeriesError("JSON series must be an object with 'times' and 'values'")
    times = doc["times"]
    values = doc["values"]
    if len(times) != len(values):
        raise SeriesError(f"{len(times)} times but {len(values)} value rows")
    widths = {len(r) if isinstance(r, list) else -1 for r in values}
    if len(widths) > 1 or -1 in widths:
        bad = next(i for i, r in enumerate(values, 1) if not isinstance(r, list) or len(r) != len(values[0]))
        raise SeriesError(f"ragged value row {bad}", row=bad)
    try:
        t = np.array(times, dtype=float)
        v = np.array(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SeriesError(f"non-numeric entry: {exc}") from None
    return TimeSeries(t, v, tuple(doc.get("labels") or ()))


def load_series(path, format: str | None = None) -> TimeSeries:
    """Read a series from CSV or JSON; the format defaults to the file suffix.

    CSV files start with a ``t,<label1>,...`` header; lines starting with
    ``#`` are metadata comments and are skipped.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".") or "csv").lower()
    text = path.read_text()
    if fmt == "csv":
        return _read_csv(text)
    if fmt == "json":
        return _read_json(text)
    raise SeriesError(f"unknown series format {fmt!r}")


def dumps_series(series: TimeSeries, format: str = "csv", comments: dict | None = None) -> str:
    """Serialise ``series``; floats are written with ``repr`` so reads are exact."""
    fmt = format.lower()
    if fmt == "json":
        doc = {}
        if comments:
            doc["meta"] = comments
        doc.update(
            times=series.times.tolist(),
            labels=list(series.labels),
            values=series.values.tolist(),
        )
        return json.dumps(doc, indent=None) + "\n"
    if fmt != "csv":
        raise SeriesError(f"unknown series format {fmt!r}")
    buf = io.StringIO()
    for key, val in (comments or {}).items():
        buf.write(f"# {key}={val}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *series.labels])
    for t, row in zip(series.times, series.values):
        writer.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    return buf.getvalue()


def save_series(series: TimeSeries, path, format: str | None = None, comments: dict | None = None) -> Path:
    path = Path(path)
    fmt = format or path.suffix.lstrip(".") or "csv"
    path.write_text(dumps_series(series, fmt, comments))
    return path


# ---------------------------------------------------------------------------
# derivative estimators


def forward_difference(series: TimeSeries) -> DerivativeEstimate:
    """First-order estimate ``(x[d+1] - x[d]) / (t[d+1] - t[d])``, ``N - 1`` rows."""
    t = series.times
    x = series.values
    dx = (x[1:] - x[:-1]) / (t[1:] - t[:-1])[:, None]
    return DerivativeEstimate(t[:-1], dx, DerivativeMethod.FORWARD, series.labels)


def _three_point_parts(t: np.ndarray):
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[:-2]
    h21 = t[2:] - t[1:-1]
    span = h2**2 - h1**2
    return h1, h2, h21, span


def three_point_derivative(series: TimeSeries) -> DerivativeEstimate:
    """Second-order first-derivative estimate from samples ``i, i+1, i+2``.

    Obtained by eliminating ``x''(t_i)`` between the quadratic Taylor
    expansions towards ``t_{i+1}`` and ``t_{i+2}``; the grid need not be
    uniform.  Exact for quadratics.  Returns ``N - 2`` rows.
    """
    if series.n_samples < 3:
        raise SeriesError("three-point estimator needs at least 3 samples")
    t = series.times
    x = series.values
    h1, _, h21, span = _three_point_parts(t)
    term_a = h1 * span
    term_b = h21 * h1**2
    denom = term_a - term_b
    scale = np.maximum(np.abs(term_a), np.abs(term_b))
    bad = np.flatnonzero(np.abs(denom) <= _DENOM_RTOL * scale)
    if bad.size:
        i = int(bad[0])
        raise DegenerateGridError(
            f"degenerate three-point denominator for samples {i}, {i + 1}, {i + 2}", row=i + 1
        )
    num = (x[1:-1] - x[:-2]) * span[:, None] - (x[2:] - x[1:-1]) * (h1**2)[:, None]
    return DerivativeEstimate(t[:-2], num / denom[:, None], DerivativeMethod.THREE_POINT, series.labels)


def second_derivative_estimate(series: TimeSeries, i: int) -> np.ndarray:
    """``x''(t_i)`` from two Taylor truncations, using the forward-difference ``x'(t_i)``."""
    n = series.n_samples
    if not 0 <= i <= n - 3:
        raise IndexError(f"index {i} out of range for a {n}-sample series (need i <= N-3)")
    t = series.times
    x = series.values
    d1 = (x[i + 1] - x[i]) / (t[i + 1] - t[i])
    h1 = t[i + 1] - t[i]
    h2 = t[i + 2] - t[i]
    h21 = t[i + 2] - t[i + 1]
    denom = h2**2 - h1**2
    if abs(denom) <= _DENOM_RTOL * max(h2**2, h1**2):
        raise DegenerateGridError(f"degenerate second-derivative denominator at index {i}", row=i + 1)
    return 2.0 * (x[i + 2] - x[i + 1] - d1 * h21) / denom


def estimate_derivative(series: TimeSeries, method="forward") -> DerivativeEstimate:
    method = DerivativeMethod(method)
    if method is DerivativeMethod.THREE_POINT:
        return three_point_derivative(series)
    return forward_difference(series)


def lipschitz_diagnostic(series: TimeSeries) -> float:
    """Largest observed slope ``|x[d+1]-x[d]| / |t[d+1]-t[d]|`` over all states."""
    slopes = np.abs(np.diff(series.values, axis=0)) / np.diff(series.times)[:, None]
    out = float(slopes.max())
    return 0.0 if math.isnan(out) else out
