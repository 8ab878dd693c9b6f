"""Mixed-frequency covariate tensors.

A monthly response is regressed on the daily values of seven financial series
over the previous four months. For month ``t`` the covariate is a
``4 x 7 x 22`` tensor: ``x[i - 1]`` is the ``7 x 22`` matrix of month
``t - i`` (lag ``i``), rows in the order GV, BV, ER, IR, VI, TB, BD and
columns the trading days of that month from oldest to newest.

Months rarely have exactly 22 trading days. Longer months keep their last 22
days; shorter months are front-padded by repeating their first day.

Dates are ISO-8601, CSV files have a header row and missing values are
rejected rather than imputed.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SERIES = ("GV", "BV", "ER", "IR", "VI", "TB", "BD")
N_LAGS = 4
DAYS_PER_MONTH = 22

Month = tuple[int, int]  # (year, month)


class IngestionError(ValueError):
    """Malformed or incomplete input data."""


def month_of(date: dt.date) -> Month:
    return date.year, date.month


def shift_month(month: Month, k: int) -> Month:
    idx = month[0] * 12 + (month[1] - 1) + k
    return idx // 12, idx % 12 + 1


def month_label(month: Month) -> str:
    return f"{month[0]:04d}-{month[1]:02d}"


def parse_month(text: str) -> Month:
    """Accept ``YYYY-MM`` or a full ISO date."""
    text = text.strip()
    try:
        if len(text) == 7:
            year, mon = text.split("-")
            return int(year), int(mon)
        return month_of(dt.date.fromisoformat(text))
    except ValueError as exc:
        raise IngestionError(f"bad month/date {text!r}") from exc


def normalize_days(block: np.ndarray, days: int = DAYS_PER_MONTH) -> np.ndarray:
    """Force a ``(n_series, n_days)`` block to exactly ``days`` columns."""
    n = block.shape[1]
    if n == 0:
        raise IngestionError("month without daily observations")
    if n >= days:
        return block[:, n - days:]
    pad = np.repeat(block[:, :1], days - n, axis=1)
    return np.concatenate([pad, block], axis=1)


@dataclass
class MixedFrequencyFrame:
    response_months: list[Month]
    response: np.ndarray          # (n_months,)
    daily_dates: list[dt.date]    # sorted ascending
    daily: np.ndarray             # (n_days, 7) in SERIES order

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        self.daily = np.asarray(self.daily, dtype=float)
        if self.daily.ndim != 2 or self.daily.shape[1] != len(SERIES):
            raise IngestionError(f"daily table must have {len(SERIES)} series")
        if len(self.daily_dates) != self.daily.shape[0]:
            raise IngestionError("one date per daily row required")
        if len(self.response_months) != len(self.response):
            raise IngestionError("one month per response value required")
        if not np.all(np.isfinite(self.daily)) or not np.all(np.isfinite(self.response)):
            raise IngestionError("missing or non-finite values")
        order = sorted(range(len(self.daily_dates)), key=lambda i: self.daily_dates[i])
        self.daily_dates = [self.daily_dates[i] for i in order]
        self.daily = self.daily[order]
        self._by_month: dict[Month, np.ndarray] = {}
        for i, d in enumerate(self.daily_dates):
            self._by_month.setdefault(month_of(d), []).append(i)
        self._by_month = {k: np.array(v) for k, v in self._by_month.items()}

    @classmethod
    def from_csv(cls, response_path: str | Path, daily_path: str | Path) -> "MixedFrequencyFrame":
        months, values = [], []
        with open(response_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"date", "value"} <= set(reader.fieldnames):
                raise IngestionError(f"{response_path}: expected columns date,value")
            for row in reader:
                months.append(parse_month(row["date"]))
                values.append(_parse_float(row["value"], response_path, row["date"]))
        dates, rows = [], []
        with open(daily_path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = set(reader.fieldnames or [])
            if "date" not in cols or set(SERIES) != cols - {"date"}:
                raise IngestionError(f"{daily_path}: expected columns date,{','.join(SERIES)}")
            for row in reader:
                try:
                    dates.append(dt.date.fromisoformat(row["date"].strip()))
                except ValueError as exc:
                    raise IngestionError(f"{daily_path}: bad date {row['date']!r}") from exc
                rows.append([_parse_float(row[s], daily_path, row["date"]) for s in SERIES])
        return cls(months, np.array(values), dates, np.array(rows).reshape(-1, len(SERIES)))

    def month_block(self, month: Month) -> np.ndarray:
        """``7 x 22`` daily matrix of one month."""
        idx = self._by_month.get(month)
        if idx is None:
            raise IngestionError(f"no daily observations for {month_label(month)}")
        return normalize_days(self.daily[idx].T)

    def available_months(self) -> list[Month]:
        """Response months whose four preceding months all have daily data."""
        return [m for m in self.response_months
                if all(shift_month(m, -i) in self._by_month for i in range(1, N_LAGS + 1))]

    def build_tensor(self, month: Month) -> np.ndarray:
        missing = [month_label(shift_month(month, -i)) for i in range(1, N_LAGS + 1)
                   if shift_month(month, -i) not in self._by_month]
        if missing:
            raise IngestionError(f"month {month_label(month)} lacks daily data for {', '.join(missing)}")
        return np.stack([self.month_block(shift_month(month, -i)) for i in range(1, N_LAGS + 1)])

    def build_design(self, months: Sequence[Month] | None = None) -> tuple[np.ndarray, np.ndarray, list[Month]]:
        """Covariate tensors ``(n, 4, 7, 22)``, responses and their months."""
        months = self.available_months() if months is None else list(months)
        lookup = dict(zip(self.response_months, self.response))
        missing = [month_label(m) for m in months if m not in lookup]
        if missing:
            raise IngestionError(f"no response for {', '.join(missing)}")
        x = np.stack([self.build_tensor(m) for m in months]) if months else np.empty((0, N_LAGS, len(SERIES), DAYS_PER_MONTH))
        return x, np.array([lookup[m] for m in months]), months


def build_mixed_frequency_tensor(frame: MixedFrequencyFrame, month: Month) -> np.ndarray:
    return frame.build_tensor(month)


def _parse_float(text: str | None, path, key) -> float:
    if text is None or text.strip() == "":
        raise IngestionError(f"{path}: missing value at {key}")
    try:
        v = float(text)
    except ValueError as exc:
        raise IngestionError(f"{path}: bad number {text!r} at {key}") from exc
    if not math.isfinite(v):
        raise IngestionError(f"{path}: non-finite value at {key}")
    return v


# -- dense tensor CSV dumps -----------------------------------------------------------


def write_tensor_csv(path: str | Path, x: np.ndarray) -> None:
    """One row per entry: one-based indices then the value (canonical order)."""
    x = np.asarray(x, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"i{k + 1}" for k in range(x.ndim)] + ["value"])
        for idx in np.ndindex(*x.shape[::-1]):
            idx = idx[::-1]
            writer.writerow([i + 1 for i in idx] + [repr(float(x[idx]))])


def read_tensor_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader]
    n_modes = len(header) - 1
    if n_modes < 1 or not rows:
        raise IngestionError(f"{path}: empty tensor dump")
    idx = np.array([[int(v) for v in r[:n_modes]] for r in rows]) - 1
    shape = tuple(idx.max(axis=0) + 1)
    out = np.full(shape, np.nan)
    out[tuple(idx.T)] = [float(r[-1]) for r in rows]
    if np.isnan(out).any():
        raise IngestionError(f"{path}: tensor dump has missing entries")
    return out
