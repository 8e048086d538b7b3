"""Forecast accuracy metrics and per-dataset aggregation.

sMAPE uses the 0-200 convention: 100 * mean(2|y - f| / (|y| + |f|)).
The scaled error here is reference-relative: model MAE over the MAE of a
supplied reference forecast on the same hold-out, not the in-sample
naive-scaled original.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _arrays(y, f):
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {f.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    return y, f


def mape(y, f) -> float:
    y, f = _arrays(y, f)
    if np.any(y == 0):
        raise NumericError("MAPE undefined: actuals contain zeros")
    return float(100.0 * np.mean(np.abs(y - f) / np.abs(y)))


def smape(y, f) -> float:
    y, f = _arrays(y, f)
    denom = np.abs(y) + np.abs(f)
    terms = np.where(denom > 0, 2.0 * np.abs(y - f) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(100.0 * np.mean(terms))


def wape(y, f) -> float:
    y, f = _arrays(y, f)
    denom = float(np.sum(np.abs(y)))
    if denom == 0:
        raise NumericError("WAPE undefined: actuals sum to zero")
    return float(100.0 * np.sum(np.abs(y - f)) / denom)


def rmse(y, f) -> float:
    y, f = _arrays(y, f)
    return float(np.sqrt(np.mean((y - f) ** 2)))


def mae(y, f) -> float:
    y, f = _arrays(y, f)
    return float(np.mean(np.abs(y - f)))


def mase(model_mae: float, reference_mae: float) -> float:
    if reference_mae <= 0:
        raise NumericError("scaled error undefined: reference MAE is zero")
    return float(model_mae / reference_mae)


METRIC_NAMES = ("MAPE", "sMAPE", "WAPE", "RMSE", "MAE")


def series_metrics(y, f, reference=None) -> dict:
    """All metrics for one series; MASE only when a reference is given."""
    out = {
        "MAPE": mape(y, f),
        "sMAPE": smape(y, f),
        "WAPE": wape(y, f),
        "RMSE": rmse(y, f),
        "MAE": mae(y, f),
    }
    if reference is not None:
        out["MASE"] = mase(out["MAE"], mae(y, reference))
    return out


def aggregate(per_series: dict) -> dict:
    """Dataset-level value = unweighted mean of the per-series values."""
    if not per_series:
        raise ValueError("nothing to aggregate")
    names = next(iter(per_series.values())).keys()
    return {name: float(np.mean([v[name] for v in per_series.values()])) for name in names}
