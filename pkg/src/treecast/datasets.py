"""Paths to the small datasets shipped with the package, plus a seeded
synthetic panel builder used by tests and the scaling benchmark."""

from datetime import date
from importlib import resources

import numpy as np

from .data import PanelDataset, TimeSeries, derive_calendar, extend_timestamps


def bundled_path(name: str) -> str:
    ref = resources.files("treecast") / "bundled" / name
    return str(ref)


def air_passengers_path() -> str:
    """144 monthly airline passenger totals, 1949-1960."""
    return bundled_path("air_passengers.csv")


def panel_a_path() -> str:
    """Three equal-length synthetic seasonal series with a categorical column."""
    return bundled_path("panel_seasonal_a.csv")


def panel_b_path() -> str:
    """Three positive seasonal series of unequal length (exercises padding)."""
    return bundled_path("panel_seasonal_b.csv")


def synthetic_panel(n_series: int, length: int, seed: int = 0,
                    frequency: str = "monthly") -> PanelDataset:
    """Seasonal panel with trend and noise, built in memory.

    Deterministic for a given seed; one categorical column ("group") and one
    numeric column ("exposure") exercise both feature kinds.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    start = date(2000, 1, 1)
    stamps = [start] + extend_timestamps(start, frequency, length - 1)
    period = {"monthly": 12, "daily": 7, "yearly": 4}[frequency]

    series = []
    series_idx, y = [], []
    group, exposure = [], []
    for i in range(n_series):
        base = rng.uniform(50, 150)
        slope = rng.uniform(-0.2, 0.5)
        amp = rng.uniform(5, 25)
        phase = rng.uniform(0, 2 * np.pi)
        noise = rng.normal(0, 2.0, length)
        t = np.arange(length)
        vals = base + slope * t + amp * np.sin(2 * np.pi * t / period + phase) + noise
        vals = np.maximum(vals, 1.0)
        series.append(TimeSeries(f"syn_{i:03d}", tuple(stamps), vals))
        series_idx.extend([i] * length)
        y.extend(vals)
        group.extend([i % 4] * length)
        exposure.extend(list(rng.uniform(0.5, 1.5, length)))

    n = len(y)
    ds = PanelDataset(
        series=tuple(series),
        series_idx=np.asarray(series_idx, dtype=np.int64),
        y=np.asarray(y, dtype=np.float64),
        mask=np.ones(n, dtype=bool),
        pad=np.zeros(n, dtype=bool),
        orig_len=tuple(length for _ in range(n_series)),
        frequency=frequency,
        cat={"group": np.asarray(group, dtype=np.int64)},
        num={"exposure": np.asarray(exposure, dtype=np.float64)},
        code_maps={"group": {str(v): v for v in range(4)}},
    )
    return derive_calendar(ds)
