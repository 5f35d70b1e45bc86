"""WHO-format CSV ingestion, per-country series extraction, scaling and windowing.

The raw feed is a daily CSV with one row per (country, date). Everything the
training stack consumes is derived here: gap-free per-country series, the
chronological train/validation/test split, min-max scaling fitted on the
training block only, and sliding-window supervised pairs with a direct
h-step-ahead target.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import (
    BadCountError,
    BadDateError,
    ConstantSeriesError,
    EmptyRangeError,
    InvalidValueError,
    MissingColumnError,
    TooShortError,
    UnknownCountryError,
)

log = logging.getLogger("horizonbench.data")

COUNT_COLUMNS = ("new_cases", "cumulative_cases", "new_deaths", "cumulative_deaths")

# Canonical header spelling used when re-serializing.
_CSV_HEADER = (
    "Date_reported",
    "Country_code",
    "Country",
    "WHO_region",
    "New_cases",
    "Cumulative_cases",
    "New_deaths",
    "Cumulative_deaths",
)

# Cumulative columns must be non-negative; daily columns may carry negative
# corrections from the source feed.
_NON_NEGATIVE = frozenset({"cumulative_cases", "cumulative_deaths"})


@dataclass(frozen=True)
class SeriesRecord:
    date_reported: date
    country_code: str
    country: str
    who_region: str
    new_cases: int
    cumulative_cases: int
    new_deaths: int
    cumulative_deaths: int

    def count(self, column: str) -> int:
        if column not in COUNT_COLUMNS:
            raise InvalidValueError(f"unknown count column {column!r}")
        return getattr(self, column)


@dataclass(frozen=True)
class TimeSeries:
    """Gap-free daily series for one (country, column) pair."""

    country_code: str
    column: str
    start_date: date
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=len(self.values) - 1)

    def date_at(self, index: int) -> date:
        return self.start_date + timedelta(days=index)


@dataclass
class MinMaxScaler:
    """Affine map sending the fitted [min, max] range onto [0, 1].

    Values outside the fitted range map outside [0, 1]; that is expected for
    test data and is left untouched.
    """

    min: float
    max: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "MinMaxScaler":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ConstantSeriesError("cannot fit scaler on empty data")
        lo = float(values.min())
        hi = float(values.max())
        if hi == lo:
            raise ConstantSeriesError(f"constant series (min = max = {lo}); range is empty")
        return cls(min=lo, max=hi)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.min) / (self.max - self.min)

    def invert(self, scaled):
        return np.asarray(scaled, dtype=np.float64) * (self.max - self.min) + self.min


@dataclass(frozen=True)
class WindowedDataset:
    """Supervised pairs: a length-W input window and the value h days after its end."""

    window_len: int
    horizon: int
    inputs: np.ndarray  # (n, W)
    targets: np.ndarray  # (n,)
    origin_dates: tuple[date, ...] | None = None  # date of each window's last element

    def __len__(self) -> int:
        return len(self.targets)


def _normalize_header(name: str) -> str:
    return name.strip().lstrip("﻿").strip().lower()


def _parse_date(text: str, row_num: int) -> date:
    text = text.strip()
    try:
        return date.fromisoformat(text)
    except ValueError:
        pass
    # Table-style M/D/YYYY is accepted as well; the export format has changed
    # over time.
    try:
        return datetime.strptime(text, "%m/%d/%Y").date()
    except ValueError:
        raise BadDateError(f"row {row_num}: unparseable date {text!r}") from None


def _parse_count(text: str, column: str, row_num: int) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise BadCountError(f"row {row_num}: non-numeric {column} value {text!r}") from None
    if column in _NON_NEGATIVE and value < 0:
        raise BadCountError(f"row {row_num}: negative {column} value {value}")
    return value


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8-sig")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data


def parse_who_csv(source) -> list[SeriesRecord]:
    """Parse a WHO-format CSV into records sorted by (country_code, date).

    ``source`` may be a path or an open text/binary stream. The header is
    matched case-insensitively and in any column order; extra columns are
    ignored. Duplicate (country, date) rows keep the last occurrence with a
    warning; a decreasing cumulative column is warned about but accepted.
    """
    reader = csv.reader(io.StringIO(_read_text(source)))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumnError("empty input: no header row") from None

    positions: dict[str, int] = {}
    for idx, name in enumerate(header):
        positions.setdefault(_normalize_header(name), idx)
    required = [_normalize_header(h) for h in _CSV_HEADER]
    missing = [h for h in required if h not in positions]
    if missing:
        raise MissingColumnError(f"header lacks required column(s): {', '.join(missing)}")

    by_key: dict[tuple[str, date], SeriesRecord] = {}
    duplicates = 0
    for row_num, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise BadCountError(f"row {row_num}: expected {len(header)} fields, got {len(row)}")
        cell = lambda name: row[positions[name]]
        when = _parse_date(cell("date_reported"), row_num)
        record = SeriesRecord(
            date_reported=when,
            country_code=cell("country_code").strip(),
            country=cell("country").strip(),
            who_region=cell("who_region").strip(),
            new_cases=_parse_count(cell("new_cases"), "new_cases", row_num),
            cumulative_cases=_parse_count(cell("cumulative_cases"), "cumulative_cases", row_num),
            new_deaths=_parse_count(cell("new_deaths"), "new_deaths", row_num),
            cumulative_deaths=_parse_count(cell("cumulative_deaths"), "cumulative_deaths", row_num),
        )
        key = (record.country_code, when)
        if key in by_key:
            duplicates += 1
        by_key[key] = record

    if duplicates:
        log.warning("dropped %d duplicate (country, date) row(s), keeping the last", duplicates)

    records = sorted(by_key.values(), key=lambda r: (r.country_code, r.date_reported))
    _warn_on_decreasing_cumulatives(records)
    return records


def _warn_on_decreasing_cumulatives(records: list[SeriesRecord]) -> None:
    prev: dict[tuple[str, str], int] = {}
    for rec in records:
        for column in ("cumulative_cases", "cumulative_deaths"):
            key = (rec.country_code, column)
            value = rec.count(column)
            if key in prev and value < prev[key]:
                log.warning(
                    "%s %s decreases on %s (%d -> %d)",
                    rec.country_code, column, rec.date_reported, prev[key], value,
                )
            prev[key] = value


def write_who_csv(records, destination) -> None:
    """Serialize records back to the canonical CSV layout (used by fixtures/tests)."""
    rows = [
        (
            r.date_reported.isoformat(), r.country_code, r.country, r.who_region,
            r.new_cases, r.cumulative_cases, r.new_deaths, r.cumulative_deaths,
        )
        for r in records
    ]

    def _write(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        writer.writerows(rows)

    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8", newline="") as handle:
            _write(handle)
    else:
        _write(destination)


def extract_series(
    records,
    country_code: str,
    column: str,
    date_range: tuple[date, date] | None = None,
) -> TimeSeries:
    """Build a gap-free daily series for one country and count column.

    Missing interior dates are forward-filled from the previous value and
    logged. ``date_range`` endpoints are inclusive; by default the country's
    full available range is used.
    """
    if column not in COUNT_COLUMNS:
        raise InvalidValueError(f"unknown count column {column!r}")
    country_code = country_code.strip().upper()
    by_date = {
        r.date_reported: r.count(column)
        for r in records
        if r.country_code.upper() == country_code
    }
    if not by_date:
        raise UnknownCountryError(f"no records for country code {country_code!r}")

    first, last = min(by_date), max(by_date)
    if date_range is None:
        start, end = first, last
    else:
        start, end = date_range
        if start > end:
            raise EmptyRangeError(f"empty date range {start}..{end}")
        if end < first or start > last:
            raise EmptyRangeError(
                f"range {start}..{end} does not intersect available data {first}..{last}"
            )
        if start < first:
            raise EmptyRangeError(f"range starts {start}, before first record {first}")

    n_days = (end - start).days + 1
    values = np.empty(n_days, dtype=np.float64)
    filled = 0
    current = float(by_date[start])
    for i in range(n_days):
        day = start + timedelta(days=i)
        if day in by_date:
            current = float(by_date[day])
        else:
            filled += 1
        values[i] = current
    if filled:
        log.warning(
            "%s %s: forward-filled %d missing day(s) in %s..%s",
            country_code, column, filled, start, end,
        )
    return TimeSeries(country_code=country_code, column=column, start_date=start, values=values)


def split_series(values, train_frac: float, val_frac_of_train: float):
    """Chronological split into (train, validation, test).

    The test block is the trailing ceil((1 - train_frac) * n) points; the
    validation block is the trailing floor(val_frac_of_train * train_len)
    points of the training block. Concatenating the three pieces in order
    reconstructs the input.
    """
    if not 0.0 < train_frac < 1.0:
        raise InvalidValueError(f"train_frac must be in (0, 1), got {train_frac}")
    if not 0.0 <= val_frac_of_train < 1.0:
        raise InvalidValueError(f"val_frac_of_train must be in [0, 1), got {val_frac_of_train}")
    values = np.asarray(values)
    n = len(values)
    if n == 0:
        raise TooShortError("cannot split an empty series")

    # floor with a small guard so that e.g. 0.7 * 300 = 210.00000000000003
    # still lands on 210, keeping ceil((1-f)*n) == n - floor(f*n) exact.
    train_block = int(np.floor(train_frac * n + 1e-9))
    if train_block == 0:
        raise TooShortError(f"train split would be empty for n={n}, train_frac={train_frac}")
    val_len = int(np.floor(val_frac_of_train * train_block + 1e-9))
    if val_len == 0 and val_frac_of_train > 0.0:
        raise TooShortError(
            f"validation split would be empty for train_len={train_block}, "
            f"val_frac={val_frac_of_train}"
        )
    train_len = train_block - val_len
    if train_len == 0:
        raise TooShortError("training split would be empty after carving out validation")

    return values[:train_len], values[train_len:train_block], values[train_block:]


def build_windows(values, window_len: int, horizon: int, start_date: date | None = None) -> WindowedDataset:
    """Sliding windows with stride 1 and a direct h-step-ahead scalar target.

    inputs[i][j] = values[i + j]; targets[i] = values[i + W - 1 + h].
    When ``start_date`` is given, origin_dates[i] is the date of the window's
    last element.
    """
    if window_len < 1 or horizon < 1:
        raise InvalidValueError("window_len and horizon must be positive")
    values = np.asarray(values, dtype=np.float64)
    n = len(values) - window_len - horizon + 1
    if n < 1:
        raise TooShortError(
            f"series of length {len(values)} is too short for W={window_len}, h={horizon}"
        )
    inputs = np.empty((n, window_len), dtype=np.float64)
    for i in range(n):
        inputs[i] = values[i : i + window_len]
    targets = values[window_len + horizon - 1 : window_len + horizon - 1 + n].copy()
    origins = None
    if start_date is not None:
        origins = tuple(start_date + timedelta(days=i + window_len - 1) for i in range(n))
    return WindowedDataset(
        window_len=window_len, horizon=horizon, inputs=inputs, targets=targets,
        origin_dates=origins,
    )
