from datetime import date

import numpy as np
import pytest

from treecast.data import (PanelDataset, TimeSeries, build_lags, derive_calendar,
                           drop_last, extend_timestamps, ingest_csv)
from treecast.datasets import air_passengers_path
from treecast.hypertree import BoostConfig, FeatureRecipe
from treecast.hypertree import train as train_hypertree
from treecast.targets import TargetSpec


def make_panel(series_values, frequency="monthly", start=date(2000, 1, 1), cat=None, num=None):
    """Panel from {series_id: values}; optional flat cat/num column arrays."""
    series = []
    series_idx, y = [], []
    for i, (sid, vals) in enumerate(series_values.items()):
        vals = np.asarray(vals, dtype=np.float64)
        stamps = [start] + extend_timestamps(start, frequency, len(vals) - 1)
        series.append(TimeSeries(sid, tuple(stamps), vals))
        series_idx.extend([i] * len(vals))
        y.extend(vals)
    n = len(y)
    ds = PanelDataset(
        series=tuple(series),
        series_idx=np.asarray(series_idx, dtype=np.int64),
        y=np.asarray(y, dtype=np.float64),
        mask=np.ones(n, dtype=bool),
        pad=np.zeros(n, dtype=bool),
        orig_len=tuple(len(s) for s in series),
        frequency=frequency,
        cat={k: np.asarray(v, dtype=np.int64) for k, v in (cat or {}).items()},
        num={k: np.asarray(v, dtype=np.float64) for k, v in (num or {}).items()},
    )
    return derive_calendar(ds)


def ar2_sim(n=300, phi1=0.55, phi2=-0.25, seed=2024, burn=50):
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, 1.0, n + burn)
    y = np.zeros(n + burn)
    for t in range(2, n + burn):
        y[t] = phi1 * y[t - 1] + phi2 * y[t - 2] + e[t]
    return y[burn:]


@pytest.fixture(scope="session")
def air_full():
    return ingest_csv(air_passengers_path())


@pytest.fixture(scope="session")
def air_train(air_full):
    """First 132 months with AR(12) lags; last year held out."""
    return build_lags(drop_last(air_full, 12), 12)


@pytest.fixture(scope="session")
def air_holdout(air_full):
    return air_full.series[0].values[-12:]


@pytest.fixture(scope="session")
def air_recipe():
    return FeatureRecipe(calendar=("month", "quarter"))


@pytest.fixture(scope="session")
def air_ar_model(air_train, air_recipe):
    model, log = train_hypertree(
        air_train, TargetSpec(kind="ar", p=12), BoostConfig(rounds=100), air_recipe
    )
    return model, log
