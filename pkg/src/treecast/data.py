"""Panel time-series ingestion and feature preparation.

A :class:`PanelDataset` keeps one row per observation, sorted by
(series_id, timestamp), with flat numpy arrays for the target, calendar
features, lag columns, categorical codes and the padding mask.  All
operations are pure: they return a new dataset and never mutate their
input, so they are safe to call from multiple threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import date, timedelta

import numpy as np

from .errors import DataError

CALENDAR_NAMES = ("month", "quarter", "year", "day_of_week")
FREQUENCIES = ("monthly", "daily", "yearly")

# acf of a constant series is undefined; we report 0 by convention
SUMMARY_NAMES = ("f_mean", "f_std", "f_trend_strength", "f_seasonal_strength", "f_acf1")

RESERVED_CODE = -1  # categorical code for categories unseen at training time


@dataclass(frozen=True)
class TimeSeries:
    """One identified series: strictly increasing dates and aligned values."""

    series_id: str
    timestamps: tuple
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class PanelDataset:
    """Aligned panel of series with per-observation feature rows.

    Rows of one series are contiguous.  ``mask`` is False exactly on rows
    appended by :func:`pad_for_ets`; masked rows never contribute to any
    loss, gradient or metric.  ``orig_len`` records the pre-padding length
    of each series, which is where forecasts start.
    """

    series: tuple
    series_idx: np.ndarray          # (N,) int, position into `series`
    y: np.ndarray                   # (N,) float
    mask: np.ndarray                # (N,) bool, False = padded
    pad: np.ndarray                 # (N,) bool, True = appended row
    orig_len: tuple                 # per-series true length
    frequency: str
    horizon: int = 1
    month: np.ndarray | None = None
    quarter: np.ndarray | None = None
    year: np.ndarray | None = None
    day_of_week: np.ndarray | None = None
    time_index: np.ndarray | None = None
    cat: dict = field(default_factory=dict)      # name -> (N,) int codes
    num: dict = field(default_factory=dict)      # name -> (N,) float
    code_maps: dict = field(default_factory=dict)
    lags: np.ndarray | None = None               # (N, p) float, NaN where invalid
    lag_valid: np.ndarray | None = None          # (N,) bool
    p: int = 0

    @property
    def n_rows(self):
        return len(self.y)

    @property
    def n_series(self):
        return len(self.series)

    def rows_of(self, i: int) -> np.ndarray:
        """Indices of the rows belonging to series i (contiguous)."""
        return np.nonzero(self.series_idx == i)[0]

    def timestamps_flat(self):
        out = []
        for s in self.series:
            out.extend(s.timestamps)
        return out


def _parse_date(text: str, row_no: int) -> date:
    t = text.strip()
    if len(t) == 7 and t[4] == "-":  # YYYY-MM, monthly shorthand
        t = t + "-01"
    try:
        return date.fromisoformat(t)
    except ValueError:
        raise DataError(f"row {row_no}: malformed timestamp {text!r} (expected ISO-8601 date)")


def ingest_csv(path, schema: dict | None = None, code_maps: dict | None = None) -> PanelDataset:
    """Read a panel CSV into a PanelDataset.

    Required columns: series_id, timestamp (ISO-8601 date), value (decimal).
    ``schema`` declares the remaining columns: ``{"categorical": [...],
    "numeric": [...], "frequency": "monthly"}``; undeclared extras are
    ignored.  Rows are sorted by (series_id, timestamp); duplicates and
    missing targets are rejected.

    When ``code_maps`` is given (forecast time), the categorical encoding is
    frozen: unseen categories map to the reserved code with a warning.
    """
    schema = dict(schema or {})
    cat_cols = list(schema.get("categorical", []))
    num_cols = list(schema.get("numeric", []))

    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        header = [c.strip() for c in header]
        for required in ("series_id", "timestamp", "value"):
            if required not in header:
                raise DataError(f"{path}: missing required column {required!r}")
        col = {name: header.index(name) for name in header}
        missing = [c for c in cat_cols + num_cols if c not in col]
        if missing:
            raise DataError(f"{path}: declared feature columns not in file: {missing}")

        records = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            sid = row[col["series_id"]].strip()
            ts = _parse_date(row[col["timestamp"]], row_no)
            raw_val = row[col["value"]].strip()
            if raw_val == "":
                raise DataError(f"row {row_no}: missing target value for series {sid!r}")
            try:
                val = float(raw_val)
            except ValueError:
                raise DataError(f"row {row_no}: non-numeric target {raw_val!r}")
            if not math.isfinite(val):
                raise DataError(f"row {row_no}: non-finite target {raw_val!r}")
            cats = {c: row[col[c]].strip() for c in cat_cols}
            nums = {}
            for c in num_cols:
                try:
                    nums[c] = float(row[col[c]])
                except ValueError:
                    raise DataError(f"row {row_no}: non-numeric value {row[col[c]]!r} in column {c!r}")
            records.append((sid, ts, val, cats, nums))

    if not records:
        raise DataError(f"{path}: no data rows")

    records.sort(key=lambda r: (r[0], r[1]))
    seen = set()
    for sid, ts, *_ in records:
        key = (sid, ts)
        if key in seen:
            raise DataError(f"duplicate (series_id, timestamp) key: ({sid!r}, {ts.isoformat()})")
        seen.add(key)

    if code_maps is None:
        # frozen ordinal code maps; codes are dense and start at 0
        code_maps = {}
        for c in cat_cols:
            levels = sorted({r[3][c] for r in records})
            code_maps[c] = {lev: i for i, lev in enumerate(levels)}

    def encode(col, value):
        code = code_maps.get(col, {}).get(value)
        if code is None:
            warnings.warn(f"unseen category {value!r} in column {col!r}; using reserved code")
            return RESERVED_CODE
        return code

    series = []
    series_idx = []
    y = []
    cat = {c: [] for c in cat_cols}
    num = {c: [] for c in num_cols}
    sid_order = []
    for sid, ts, val, cats, nums in records:
        if not sid_order or sid_order[-1] != sid:
            sid_order.append(sid)
            series.append([sid, [], []])
        series[-1][1].append(ts)
        series[-1][2].append(val)
        series_idx.append(len(series) - 1)
        y.append(val)
        for c in cat_cols:
            cat[c].append(encode(c, cats[c]))
        for c in num_cols:
            num[c].append(nums[c])

    series = tuple(
        TimeSeries(sid, tuple(ts_list), np.asarray(vals, dtype=np.float64))
        for sid, ts_list, vals in series
    )
    n = len(y)
    ds = PanelDataset(
        series=series,
        series_idx=np.asarray(series_idx, dtype=np.int64),
        y=np.asarray(y, dtype=np.float64),
        mask=np.ones(n, dtype=bool),
        pad=np.zeros(n, dtype=bool),
        orig_len=tuple(len(s) for s in series),
        frequency=schema.get("frequency") or _infer_frequency(series),
        cat={c: np.asarray(v, dtype=np.int64) for c, v in cat.items()},
        num={c: np.asarray(v, dtype=np.float64) for c, v in num.items()},
        code_maps=code_maps,
    )
    return derive_calendar(ds)


def _infer_frequency(series) -> str:
    for s in series:
        if len(s) >= 2:
            delta = (s.timestamps[1] - s.timestamps[0]).days
            if delta <= 2:
                return "daily"
            if delta <= 62:
                return "monthly"
            return "yearly"
    return "monthly"


def derive_calendar(ds: PanelDataset) -> PanelDataset:
    """Attach month/quarter/year/day_of_week/time_index to every row.

    Pure function of the timestamps; time_index restarts at 0 per series.
    """
    month, quarter, year, dow, tindex = [], [], [], [], []
    for s in ds.series:
        for t, ts in enumerate(s.timestamps):
            month.append(ts.month)
            quarter.append((ts.month - 1) // 3 + 1)
            year.append(ts.year)
            dow.append(ts.weekday())  # Monday=0
            tindex.append(t)
    return replace(
        ds,
        month=np.asarray(month, dtype=np.int64),
        quarter=np.asarray(quarter, dtype=np.int64),
        year=np.asarray(year, dtype=np.int64),
        day_of_week=np.asarray(dow, dtype=np.int64),
        time_index=np.asarray(tindex, dtype=np.int64),
    )


def build_lags(ds: PanelDataset, p: int) -> PanelDataset:
    """Add lag columns: row t of a series holds [y_{t-1}, ..., y_{t-p}].

    The first p rows of each series get NaN lags and lag_valid=False, which
    excludes them from training.  Series shorter than p+1 rows contribute no
    usable rows at all and trigger a warning.
    """
    if p < 1:
        raise ValueError("lag order p must be >= 1")
    n = ds.n_rows
    lags = np.full((n, p), np.nan)
    valid = np.zeros(n, dtype=bool)
    for i, s in enumerate(ds.series):
        rows = ds.rows_of(i)
        vals = ds.y[rows]
        if len(rows) < p + 1:
            warnings.warn(
                f"series {s.series_id!r} has {len(rows)} rows, fewer than p+1={p + 1}; "
                "excluded from lag training"
            )
            continue
        for j in range(1, p + 1):
            lags[rows[p:], j - 1] = vals[p - j : len(vals) - j]
        valid[rows[p:]] = True
    return replace(ds, lags=lags, lag_valid=valid, p=p)


def _next_timestamp(ts: date, frequency: str) -> date:
    if frequency == "daily":
        return ts + timedelta(days=1)
    if frequency == "monthly":
        y, m = divmod(ts.month, 12)
        return date(ts.year + y, m + 1, 1)
    if frequency == "yearly":
        return date(ts.year + 1, ts.month, ts.day)
    raise ValueError(f"unknown frequency {frequency!r}")


def extend_timestamps(last: date, frequency: str, h: int) -> list:
    out = []
    ts = last
    for _ in range(h):
        ts = _next_timestamp(ts, frequency)
        out.append(ts)
    return out


def pad_for_ets(ds: PanelDataset) -> PanelDataset:
    """Equalize series lengths by back-appending each series' own tail.

    A series short of the maximum length by k rows gets a copy of its last
    min(k, len) values appended (tiled if necessary).  Appended rows carry
    pad=True and mask=False, and an ``is_pad`` numeric feature marks them.
    Calendar features and lag columns are recomputed for the new rows.
    """
    max_len = max(len(s) for s in ds.series)
    new_series = []
    for s in ds.series:
        k = max_len - len(s)
        if k == 0:
            new_series.append(s)
            continue
        seg = s.values[-min(k, len(s)):]
        reps = int(np.ceil(k / len(seg)))
        appended = np.tile(seg, reps)[:k]
        new_ts = tuple(s.timestamps) + tuple(extend_timestamps(s.timestamps[-1], ds.frequency, k))
        new_series.append(TimeSeries(s.series_id, new_ts, np.concatenate([s.values, appended])))

    series_idx, y, mask, pad = [], [], [], []
    cat = {c: [] for c in ds.cat}
    num = {c: [] for c in ds.num}
    for i, s in enumerate(new_series):
        old_rows = ds.rows_of(i)
        n_old = len(old_rows)
        for t in range(len(s)):
            series_idx.append(i)
            y.append(s.values[t])
            is_new = t >= n_old
            mask.append(bool(ds.mask[old_rows[t]]) if not is_new else False)
            pad.append(bool(ds.pad[old_rows[t]]) if not is_new else True)
            src = old_rows[min(t, n_old - 1)]  # padded rows inherit the last row's covariates
            for c in ds.cat:
                cat[c].append(ds.cat[c][src])
            for c in ds.num:
                num[c].append(ds.num[c][src])

    out = PanelDataset(
        series=tuple(new_series),
        series_idx=np.asarray(series_idx, dtype=np.int64),
        y=np.asarray(y, dtype=np.float64),
        mask=np.asarray(mask, dtype=bool),
        pad=np.asarray(pad, dtype=bool),
        orig_len=ds.orig_len,
        frequency=ds.frequency,
        horizon=ds.horizon,
        cat={c: np.asarray(v, dtype=np.int64) for c, v in cat.items()},
        num={c: np.asarray(v, dtype=np.float64) for c, v in num.items()},
        code_maps=ds.code_maps,
    )
    out = derive_calendar(out)
    out = replace(out, num={**out.num, "is_pad": out.pad.astype(np.float64)})
    if ds.p:
        out = build_lags(out, ds.p)
    return out


def drop_last(ds: PanelDataset, h: int) -> PanelDataset:
    """Remove the trailing h rows of every series (hold-out construction).

    Only valid before padding or lag construction; calendar features are
    re-derived for the shortened panel.
    """
    if ds.pad.any() or ds.lags is not None:
        raise ValueError("drop_last expects a raw (unpadded, lag-free) panel")
    keep_rows = []
    new_series = []
    for i, s in enumerate(ds.series):
        rows = ds.rows_of(i)
        if len(rows) <= h:
            raise DataError(f"series {s.series_id!r} shorter than hold-out {h}")
        keep_rows.extend(rows[:-h])
        new_series.append(
            TimeSeries(s.series_id, s.timestamps[:-h], s.values[:-h].copy())
        )
    idx = np.asarray(keep_rows, dtype=np.int64)
    out = PanelDataset(
        series=tuple(new_series),
        series_idx=ds.series_idx[idx],
        y=ds.y[idx].copy(),
        mask=ds.mask[idx].copy(),
        pad=ds.pad[idx].copy(),
        orig_len=tuple(len(s) for s in new_series),
        frequency=ds.frequency,
        horizon=ds.horizon,
        cat={c: v[idx].copy() for c, v in ds.cat.items()},
        num={c: v[idx].copy() for c, v in ds.num.items()},
        code_maps=ds.code_maps,
    )
    return derive_calendar(out)


def _acf1(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    c = x - x.mean()
    denom = float(np.dot(c, c))
    if denom <= 0.0:
        return 0.0
    return float(np.dot(c[1:], c[:-1]) / denom)


def _strengths(values: np.ndarray, m: int):
    """Trend/seasonal strength as 1 - Var(remainder)/Var(component+remainder)."""
    from .baselines import classical_decompose

    if m < 2 or len(values) < 2 * m + 1:
        return 0.0, 0.0
    trend, seasonal, remainder = classical_decompose(values, m)
    ok = ~np.isnan(trend)
    r = remainder[ok]
    tr = trend[ok]
    se = seasonal[ok]
    var_r = float(np.var(r))
    vt = float(np.var(tr + r))
    vs = float(np.var(se + r))
    trend_strength = max(0.0, 1.0 - var_r / vt) if vt > 0 else 0.0
    seas_strength = max(0.0, 1.0 - var_r / vs) if vs > 0 else 0.0
    return trend_strength, seas_strength


def seasonal_period(frequency: str) -> int:
    return {"monthly": 12, "daily": 7, "yearly": 1}[frequency]


def summarize_series(ds: PanelDataset) -> dict:
    """Five per-series summary statistics, from the unmasked rows only.

    Returns {series_id: {name: value}}; use :func:`attach_summary` to
    broadcast them onto the feature rows.
    """
    m = seasonal_period(ds.frequency)
    out = {}
    for i, s in enumerate(ds.series):
        rows = ds.rows_of(i)
        vals = ds.y[rows][ds.mask[rows]]
        if len(vals) < 2:
            raise DataError(f"series {s.series_id!r} too short to summarize")
        trend_strength, seas_strength = _strengths(vals, m)
        out[s.series_id] = {
            "f_mean": float(np.mean(vals)),
            "f_std": float(np.std(vals)),
            "f_trend_strength": trend_strength,
            "f_seasonal_strength": seas_strength,
            "f_acf1": _acf1(vals),
        }
    return out


def attach_summary(ds: PanelDataset) -> PanelDataset:
    """Broadcast summary statistics to the rows of each series."""
    stats = summarize_series(ds)
    num = dict(ds.num)
    for name in SUMMARY_NAMES:
        col = np.empty(ds.n_rows)
        for i, s in enumerate(ds.series):
            col[ds.rows_of(i)] = stats[s.series_id][name]
        num[name] = col
    return replace(ds, num=num)


def future_panel(ds: PanelDataset, h: int) -> PanelDataset:
    """Feature rows for the h periods following each series' true end.

    Timestamps continue from the last unpadded observation, time_index keeps
    counting, and categorical/numeric covariates carry over from the last
    unmasked row (is_pad resets to 0).  Target values are placeholders.
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    new_series = []
    series_idx, tindex = [], []
    cat = {c: [] for c in ds.cat}
    num = {c: [] for c in ds.num}
    for i, s in enumerate(ds.series):
        n_true = ds.orig_len[i]
        last_ts = s.timestamps[n_true - 1]
        ts_future = extend_timestamps(last_ts, ds.frequency, h)
        new_series.append(TimeSeries(s.series_id, tuple(ts_future), np.zeros(h)))
        rows = ds.rows_of(i)
        src = rows[ds.mask[rows]][-1]
        for t in range(h):
            series_idx.append(i)
            tindex.append(n_true + t)
            for c in ds.cat:
                cat[c].append(ds.cat[c][src])
            for c in ds.num:
                num[c].append(0.0 if c == "is_pad" else ds.num[c][src])

    n = len(series_idx)
    out = PanelDataset(
        series=tuple(new_series),
        series_idx=np.asarray(series_idx, dtype=np.int64),
        y=np.zeros(n),
        mask=np.ones(n, dtype=bool),
        pad=np.zeros(n, dtype=bool),
        orig_len=tuple(h for _ in ds.series),
        frequency=ds.frequency,
        horizon=ds.horizon,
        cat={c: np.asarray(v, dtype=np.int64) for c, v in cat.items()},
        num={c: np.asarray(v, dtype=np.float64) for c, v in num.items()},
        code_maps=ds.code_maps,
    )
    out = derive_calendar(out)
    return replace(out, time_index=np.asarray(tindex, dtype=np.int64))


@dataclass(frozen=True)
class FeatureSet:
    """Dense feature matrix plus its schema, in a frozen column order."""

    X: np.ndarray                     # (N, F) float64; categorical columns hold codes
    names: tuple                      # column names
    kinds: tuple                      # "num" | "cat" per column

    @property
    def n_features(self):
        return len(self.names)


def feature_matrix(
    ds: PanelDataset,
    calendar=("month", "quarter", "year", "day_of_week"),
    include_time: bool = False,
) -> FeatureSet:
    """Assemble the model feature matrix.

    Raw time_index is excluded unless ``include_time`` is set (needed only by
    the trend+Fourier target, whose basis is an explicit function of t).
    Column order: calendar, time, categoricals (sorted), numerics (sorted).
    """
    cols, names, kinds = [], [], []
    cal = {
        "month": ds.month,
        "quarter": ds.quarter,
        "year": ds.year,
        "day_of_week": ds.day_of_week,
    }
    for name in calendar:
        if name not in cal:
            raise ValueError(f"unknown calendar feature {name!r}")
        cols.append(cal[name].astype(np.float64))
        names.append(name)
        kinds.append("num")
    if include_time:
        cols.append(ds.time_index.astype(np.float64))
        names.append("time_index")
        kinds.append("num")
    for name in sorted(ds.cat):
        cols.append(ds.cat[name].astype(np.float64))
        names.append(name)
        kinds.append("cat")
    for name in sorted(ds.num):
        cols.append(ds.num[name])
        names.append(name)
        kinds.append("num")
    X = np.column_stack(cols) if cols else np.zeros((ds.n_rows, 0))
    return FeatureSet(X=X, names=tuple(names), kinds=tuple(kinds))
