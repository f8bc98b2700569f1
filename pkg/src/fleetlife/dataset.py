"""Fleet snapshots: CSV loading, expert-threshold cleaning and window restriction.

A :class:`Dataset` is columnar and immutable. Operational time (warm hours)
is the survival clock; calendar dates place each unit in the fleet history.
Cumulative usage counters are kept raw for cleaning and converted into
per-operational-hour rates for modelling, so a covariate never encodes the
observed time it is meant to explain.
"""

from __future__ import annotations

import calendar
import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .config import read_config
from .exceptions import (
    EmptyInputError,
    EmptyResultError,
    EmptyRiskSetError,
    ParameterError,
    RowParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

STORAGE_FLAG = "storage_flag"
DAILY_HOURS = "daily_hours"
_DAYS_PER_YEAR = 365.25


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def days_between(start, end) -> np.ndarray:
    """Whole days from ``start`` to ``end`` (datetime64[D] arrays or scalars)."""
    return (np.asarray(end, dtype="datetime64[D]") - np.asarray(start, dtype="datetime64[D]")).astype(
        np.int64
    )


@dataclass(frozen=True)
class SurvivalRecord:
    id: str
    features: tuple[float, ...]
    observed_time: float
    event: int
    production_date: dt.date
    install_date: dt.date
    last_log_date: dt.date


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_csv`.

    ``per_hour`` columns are cumulative counters; each becomes the feature
    ``<col>_per_hour`` (counter divided by operational time). ``daily_hours``
    adds the average active hours per calendar day in service.
    """

    id: str = "id"
    time: str = "warm_hours"
    event: str = "event"
    production_date: str = "production_date"
    install_date: str = "install_date"
    last_log_date: str = "last_log_date"
    numeric: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ("color", "position")
    per_hour: tuple[str, ...] = ("ink_volume",)
    daily_hours: bool = True
    storage_flag: str | None = STORAGE_FLAG
    impute_missing: bool = False

    @property
    def required(self) -> tuple[str, ...]:
        return (self.id, self.time, self.event, self.production_date, self.install_date, self.last_log_date)

    @classmethod
    def from_mapping(cls, m: Mapping) -> "CsvSchema":
        kwargs = dict(m)
        for key in ("numeric", "categorical", "per_hour"):
            if key in kwargs:
                value = kwargs[key]
                kwargs[key] = (value,) if isinstance(value, str) else tuple(value)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ParameterError(f"bad schema: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar survival dataset.

    ``raw`` keeps the original covariate columns (cumulative counters,
    categorical labels, numeric values) so a dataset can be written back to
    CSV. ``entry_time`` is set on window truth sets: the operational time at
    which each subject entered the window.
    """

    ids: np.ndarray
    X: np.ndarray
    feature_names: tuple[str, ...]
    time: np.ndarray
    event: np.ndarray
    production_date: np.ndarray
    install_date: np.ndarray
    last_log_date: np.ndarray
    raw: Mapping[str, np.ndarray] = field(default_factory=dict)
    categorical_groups: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    schema: CsvSchema = field(default_factory=CsvSchema)
    entry_time: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        X = np.asarray(self.X, dtype=float).reshape(n, len(self.feature_names))
        cols = {
            "ids": np.asarray(self.ids, dtype=object),
            "X": X,
            "time": np.asarray(self.time, dtype=float),
            "event": np.asarray(self.event, dtype=np.int8),
            "production_date": np.asarray(self.production_date, dtype="datetime64[D]"),
            "install_date": np.asarray(self.install_date, dtype="datetime64[D]"),
            "last_log_date": np.asarray(self.last_log_date, dtype="datetime64[D]"),
        }
        for name, value in cols.items():
            if name != "X" and value.shape != (n,):
                raise ValueError(f"column {name} has shape {value.shape}, expected ({n},)")
            object.__setattr__(self, name, _readonly(value))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "raw", {k: _readonly(v) for k, v in self.raw.items()})
        object.__setattr__(
            self, "categorical_groups", {k: tuple(v) for k, v in self.categorical_groups.items()}
        )
        if self.entry_time is not None:
            object.__setattr__(self, "entry_time", _readonly(np.asarray(self.entry_time, dtype=float)))
        if np.any(self.time < 0) or not np.all(np.isin(self.event, (0, 1))):
            raise ValueError("observed_time must be >= 0 and event in {0, 1}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature values must be finite")
        if len(set(self.ids.tolist())) != n:
            raise ValueError("duplicate ids")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def censoring_rate(self) -> float:
        return float(np.sum(self.event == 0) / len(self)) if len(self) else 0.0

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def records(self) -> list[SurvivalRecord]:
        return [self.record(i) for i in range(len(self))]

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(
            id=str(self.ids[i]),
            features=tuple(float(v) for v in self.X[i]),
            observed_time=float(self.time[i]),
            event=int(self.event[i]),
            production_date=self.production_date[i].astype(dt.date),
            install_date=self.install_date[i].astype(dt.date),
            last_log_date=self.last_log_date[i].astype(dt.date),
        )

    def subset(self, index) -> "Dataset":
        """Rows selected by a boolean mask or integer index array."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return replace(
            self,
            ids=self.ids[index],
            X=self.X[index],
            time=self.time[index],
            event=self.event[index],
            production_date=self.production_date[index],
            install_date=self.install_date[index],
            last_log_date=self.last_log_date[index],
            raw={k: v[index] for k, v in self.raw.items()},
            entry_time=None if self.entry_time is None else self.entry_time[index],
        )

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def matrix(self, columns: Sequence[str]) -> np.ndarray:
        """Feature matrix restricted to ``columns`` (in that order)."""
        try:
            idx = [self.feature_names.index(c) for c in columns]
        except ValueError as exc:
            raise KeyError(f"unknown feature: {exc}") from exc
        return self.X[:, idx]

    def design_columns(self, drop_reference: bool = True) -> list[str]:
        """Feature names for regression models.

        With ``drop_reference`` the first level of every categorical group is
        left out, so one-hot blocks are not collinear with an intercept (or
        with each other after centering).
        """
        dropped = {levels[0] for levels in self.categorical_groups.values() if levels} if drop_reference else set()
        return [f for f in self.feature_names if f not in dropped]


# ---------------------------------------------------------------------------
# CSV IO


def _parse_date(value: str) -> np.datetime64:
    return np.datetime64(dt.date.fromisoformat(value.strip()), "D")


def _feature_block(schema: CsvSchema, frame: pd.DataFrame, time, install, last_log):
    """Build the feature matrix; returns (X, names, groups, missing_mask, raw)."""
    n = len(frame)
    cols: list[np.ndarray] = []
    names: list[str] = []
    groups: dict[str, tuple[str, ...]] = {}
    raw: dict[str, np.ndarray] = {}
    missing = np.zeros(n, dtype=bool)
    imputable = []

    def numeric(col):
        values = pd.to_numeric(frame[col].str.strip().replace("", np.nan), errors="coerce").to_numpy(float)
        return values

    for col in schema.numeric:
        values = numeric(col)
        raw[col] = values
        cols.append(values)
        names.append(col)
        imputable.append(len(cols) - 1)
    for col in schema.per_hour:
        counter = numeric(col)
        raw[col] = counter
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(time > 0, counter / np.where(time > 0, time, 1.0), np.nan)
        cols.append(rate)
        names.append(f"{col}_per_hour")
        imputable.append(len(cols) - 1)
    if schema.daily_hours:
        cols.append(time / np.maximum(days_between(install, last_log), 1))
        names.append(DAILY_HOURS)
    for col in schema.categorical:
        labels = frame[col].str.strip().to_numpy(object)
        raw[col] = labels
        missing |= labels == ""
        levels: list[str] = []
        for label in labels:
            if label != "" and label not in levels:
                levels.append(label)
        level_names = tuple(f"{col}_{lv}" for lv in levels)
        groups[col] = level_names
        for lv in levels:
            cols.append((labels == lv).astype(float))
        names.extend(level_names)
    flag = np.zeros(n)
    if schema.storage_flag and schema.storage_flag in frame.columns:
        flag = numeric(schema.storage_flag)
        missing |= ~np.isin(flag, (0.0, 1.0))
        flag = np.where(np.isin(flag, (0.0, 1.0)), flag, 0.0)
    cols.append(flag)
    names.append(STORAGE_FLAG)

    X = np.column_stack(cols) if cols else np.empty((n, 0))
    for j in imputable:
        bad = ~np.isfinite(X[:, j])
        if schema.impute_missing and bad.any():
            X[bad, j] = np.nanmean(np.where(bad, np.nan, X[:, j])) if (~bad).any() else 0.0
        else:
            missing |= bad
    return X, names, groups, missing, raw


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> Dataset:
    """Load a fleet snapshot CSV (UTF-8, header row, ISO dates)."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise EmptyInputError(f"{path}: empty file") from exc
    return from_frame(frame, schema, source=str(path))


def from_frame(frame: pd.DataFrame, schema: CsvSchema | None = None, source: str = "<frame>") -> Dataset:
    """Build a dataset from a frame of raw string cells, validating every row."""
    schema = schema or CsvSchema()
    path = source
    frame = frame.reset_index(drop=True)
    needed = list(schema.required) + list(schema.numeric) + list(schema.categorical) + list(schema.per_hour)
    absent = [c for c in needed if c not in frame.columns]
    if absent:
        raise SchemaError(f"{path}: missing column(s) {absent}")
    if frame.empty:
        raise EmptyInputError(f"{path}: no data rows")

    n = len(frame)
    errors: list[tuple[int, str]] = []
    time = np.full(n, np.nan)
    event = np.zeros(n, dtype=np.int8)
    dates = {k: np.zeros(n, dtype="datetime64[D]") for k in ("production_date", "install_date", "last_log_date")}
    seen: dict[str, int] = {}
    ids = frame[schema.id].str.strip().to_numpy(object)
    for row in range(n):
        problems = []
        rid = ids[row]
        if not rid:
            problems.append("empty id")
        elif rid in seen:
            problems.append(f"duplicate id {rid!r} (first at row {seen[rid]})")
        else:
            seen[rid] = row + 1
        try:
            t = float(frame.at[row, schema.time])
            if not math.isfinite(t) or t < 0:
                raise ValueError
            time[row] = t
        except ValueError:
            problems.append(f"{schema.time}={frame.at[row, schema.time]!r} is not a non-negative number")
        ev = frame.at[row, schema.event].strip()
        if ev in ("0", "1"):
            event[row] = int(ev)
        else:
            problems.append(f"{schema.event}={ev!r} not in {{0, 1}}")
        dates_ok = True
        for key in dates:
            col = getattr(schema, key)
            try:
                dates[key][row] = _parse_date(frame.at[row, col])
            except ValueError:
                dates_ok = False
                problems.append(f"{col}={frame.at[row, col]!r} is not an ISO date")
        if dates_ok:
            if dates["install_date"][row] < dates["production_date"][row]:
                problems.append("install_date precedes production_date")
            if dates["last_log_date"][row] < dates["install_date"][row]:
                problems.append("last_log_date precedes install_date")
        if problems:
            errors.append((row + 1, "; ".join(problems)))
    if errors:
        raise RowParseError(errors)

    X, names, groups, missing, raw = _feature_block(
        schema, frame, time, dates["install_date"], dates["last_log_date"]
    )
    if missing.any():
        logger.warning("%s: dropping %d row(s) with missing covariates", path, int(missing.sum()))
    keep = ~missing
    if not keep.any():
        raise EmptyResultError(f"{path}: every row has missing covariates")
    return Dataset(
        ids=ids[keep],
        X=X[keep],
        feature_names=tuple(names),
        time=time[keep],
        event=event[keep],
        production_date=dates["production_date"][keep],
        install_date=dates["install_date"][keep],
        last_log_date=dates["last_log_date"][keep],
        raw={k: v[keep] for k, v in raw.items()},
        categorical_groups=groups,
        schema=schema,
    )


def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ""


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` in the schema :func:`load_csv` reads."""
    s = ds.schema
    header = list(s.required) + list(s.numeric) + list(s.per_hour) + list(s.categorical)
    if s.storage_flag:
        header.append(s.storage_flag)
    flag = ds.column(STORAGE_FLAG)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(ds)):
            row = [
                ds.ids[i],
                _fmt(ds.time[i]),
                int(ds.event[i]),
                str(ds.production_date[i]),
                str(ds.install_date[i]),
                str(ds.last_log_date[i]),
            ]
            row += [_fmt(ds.raw[c][i]) for c in s.numeric + s.per_hour]
            row += [ds.raw[c][i] for c in s.categorical]
            if s.storage_flag:
                row.append(int(flag[i]))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Cleaning


@dataclass(frozen=True)
class CleaningConfig:
    """Expert thresholds. ``max_usage_thresholds`` keys may name raw usage
    columns (including the time column) or model features."""

    max_usage_thresholds: Mapping[str, float] = field(default_factory=dict)
    max_daily_hours: float = 12.0
    storage_flag_years: float = 1.5
    doa_max_time: float = 100.0
    min_production_date: dt.date | None = None

    def __post_init__(self):
        values = dict(self.max_usage_thresholds)
        values.update(
            max_daily_hours=self.max_daily_hours,
            storage_flag_years=self.storage_flag_years,
            doa_max_time=self.doa_max_time,
        )
        for key, value in values.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ParameterError(f"threshold {key} must be strictly positive, got {value!r}")
        if isinstance(self.min_production_date, str):
            object.__setattr__(self, "min_production_date", dt.date.fromisoformat(self.min_production_date))

    @classmethod
    def from_file(cls, path: str | Path) -> "CleaningConfig":
        flat = read_config(path)
        usage = {k.split(".", 1)[1]: float(v) for k, v in flat.items() if k.startswith("max_usage.")}
        usage.update(flat.pop("max_usage_thresholds", {}) or {})
        kwargs = {k: v for k, v in flat.items() if not k.startswith("max_usage.")}
        try:
            return cls(max_usage_thresholds=usage, **kwargs)
        except TypeError as exc:
            raise ParameterError(f"{path}: {exc}") from exc


CLEANING_RULES = ("usage", "daily_hours", "dead_on_arrival", "old")


@dataclass(frozen=True)
class CleaningReport:
    n_input: int
    n_output: int
    removed: Mapping[str, int]
    storage_flagged: int

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rule", "count"])
            for rule in CLEANING_RULES:
                w.writerow([rule, self.removed.get(rule, 0)])
            w.writerow(["storage_flagged", self.storage_flagged])
            w.writerow(["kept", self.n_output])

    def to_text(self) -> str:
        lines = [f"records in: {self.n_input}"]
        lines += [f"  removed by {rule:<16} {self.removed.get(rule, 0):>7}" for rule in CLEANING_RULES]
        lines.append(f"storage-delay flagged:   {self.storage_flagged:>7}")
        lines.append(f"records kept: {self.n_output}")
        return "\n".join(lines)


def clean(ds: Dataset, cfg: CleaningConfig) -> tuple[Dataset, CleaningReport]:
    """Apply the cleaning rules; each removed record is charged to the first rule it breaks."""
    n = len(ds)
    reason = np.full(n, "", dtype=object)

    def charge(mask, rule):
        reason[(reason == "") & mask] = rule

    over = np.zeros(n, dtype=bool)
    for name, limit in cfg.max_usage_thresholds.items():
        if name == ds.schema.time:
            values = ds.time
        elif name in ds.raw:
            values = ds.raw[name]
        elif name in ds.feature_names:
            values = ds.column(name)
        else:
            raise ParameterError(f"usage threshold {name!r} matches no column")
        over |= np.asarray(values, dtype=float) > limit
    charge(over, "usage")
    in_service = np.maximum(days_between(ds.install_date, ds.last_log_date), 1)
    charge(ds.time / in_service > cfg.max_daily_hours, "daily_hours")
    charge((ds.event == 1) & (ds.time < cfg.doa_max_time), "dead_on_arrival")
    if cfg.min_production_date is not None:
        charge(ds.production_date < np.datetime64(cfg.min_production_date, "D"), "old")

    keep = reason == ""
    if not keep.any():
        raise EmptyResultError("cleaning removed every record")
    out = ds.subset(keep)
    delay_years = days_between(out.production_date, out.install_date) / _DAYS_PER_YEAR
    storage = delay_years > cfg.storage_flag_years
    j = out.feature_names.index(STORAGE_FLAG)
    newly = int(np.sum(storage & (out.X[:, j] == 0)))
    if storage.any():
        X = out.X.copy()
        X[storage, j] = 1.0
        out = replace(out, X=X)
    removed = {rule: int(np.sum(reason == rule)) for rule in CLEANING_RULES}
    return out, CleaningReport(n, len(out), removed, newly)


# ---------------------------------------------------------------------------
# Prediction windows


@dataclass(frozen=True)
class PredictionWindow:
    """Calendar window: train on data up to ``t0``, score failures in ``(t0, t1]``."""

    t0: dt.date
    t1: dt.date

    def __post_init__(self):
        for name in ("t0", "t1"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, dt.date.fromisoformat(value))
            elif isinstance(value, np.datetime64):
                object.__setattr__(self, name, value.astype("datetime64[D]").astype(dt.date))
        if not self.t0 < self.t1:
            raise ParameterError(f"window needs t0 < t1, got {self.t0} .. {self.t1}")

    @property
    def t0_np(self) -> np.datetime64:
        return np.datetime64(self.t0, "D")

    @property
    def t1_np(self) -> np.datetime64:
        return np.datetime64(self.t1, "D")

    @property
    def span_days(self) -> int:
        return (self.t1 - self.t0).days

    def shifted(self, months: int) -> "PredictionWindow":
        return PredictionWindow(add_months(self.t0, months), add_months(self.t1, months))

    def __str__(self) -> str:
        return f"{self.t0.isoformat()}..{self.t1.isoformat()}"


def add_months(d: dt.date, months: int) -> dt.date:
    k = d.month - 1 + months
    year, month = d.year + k // 12, k % 12 + 1
    return dt.date(year, month, min(d.day, calendar.monthrange(year, month)[1]))


def rolling_windows(
    start: dt.date | str, count: int = 6, step_months: int = 6, horizon_months: int = 12
) -> list[PredictionWindow]:
    """``count`` windows whose starts are ``step_months`` apart, each ``horizon_months`` long."""
    if isinstance(start, str):
        start = dt.date.fromisoformat(start)
    if count < 1 or step_months < 1 or horizon_months < 1:
        raise ParameterError("count, step_months and horizon_months must be >= 1")
    return [
        PredictionWindow(add_months(start, k * step_months), add_months(start, k * step_months + horizon_months))
        for k in range(count)
    ]


def restrict_to_window(ds: Dataset, w: PredictionWindow) -> tuple[Dataset, Dataset]:
    """Split ``ds`` into the state known at ``w.t0`` and the outcome at ``w.t1``.

    Usage accrues linearly between installation and last log, so a unit
    still logging after ``t0`` enters ``train`` censored at its pro-rated
    exposure. ``truth`` holds every unit at risk at ``t0``; its ``event``
    marks failures in ``(t0, t1]`` and its ``entry_time`` the exposure at
    ``t0``. Units censored inside the window keep ``event = 0`` with
    ``last_log_date < t1`` (see :func:`resolved_mask`).
    """
    t0, t1 = w.t0_np, w.t1_np
    installed = ds.install_date < t0
    base = ds.subset(installed)
    after = base.last_log_date > t0
    if not np.any(after | ((base.last_log_date == t0) & (base.event == 0))):
        raise EmptyRiskSetError(f"no subject at risk at {w.t0}")

    service_days = np.maximum(days_between(base.install_date, base.last_log_date), 1)
    frac_t0 = np.where(after, days_between(base.install_date, t0) / service_days, 1.0)
    time_t0 = base.time * frac_t0

    def scaled_raw(part, frac):
        # cumulative counters accrue with usage; labels and numeric covariates do not
        return {k: (v * frac if k in part.schema.per_hour else v) for k, v in part.raw.items()}

    train = replace(
        base,
        time=time_t0,
        event=np.where(after, 0, base.event),
        last_log_date=np.where(after, t0, base.last_log_date),
        raw=scaled_raw(base, frac_t0),
    )
    at_risk = after | ((base.last_log_date == t0) & (base.event == 0))
    sub = base.subset(at_risk)
    failed = (sub.event == 1) & (sub.last_log_date <= t1)
    service = np.maximum(days_between(sub.install_date, sub.last_log_date), 1)
    frac_end = np.where(sub.last_log_date > t1, days_between(sub.install_date, t1) / service, 1.0)
    truth = replace(
        sub,
        time=sub.time * frac_end,
        event=failed.astype(np.int8),
        last_log_date=np.minimum(sub.last_log_date, t1),
        raw=scaled_raw(sub, frac_end),
        entry_time=time_t0[at_risk],
    )
    return train, truth


def resolved_mask(truth: Dataset, w: PredictionWindow) -> np.ndarray:
    """Subjects of a window truth set whose status at ``t1`` is known."""
    return (truth.event == 1) | (truth.last_log_date >= w.t1_np)


def at_risk_mask(train: Dataset, w: PredictionWindow) -> np.ndarray:
    """Subjects of a window train set still under observation at ``t0``."""
    return (train.event == 0) & (train.last_log_date >= w.t0_np)
