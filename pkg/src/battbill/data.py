"""Day-trace ingestion, synthetic data and dataset handling.

A day trace is one day of 10-minute averaged consumption and production
samples in kW. CSV files use the header `day_id,step,p_cons_kw,p_pv_kw`
with contiguous steps 0..H-1 per day, UTF-8, LF endings, decimal point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Base for dataset problems (maps to CLI exit code 3)."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingStep(DataError):
    pass


class NegativePower(DataError):
    pass


class EmptyInput(DataError):
    pass


@dataclass(frozen=True)
class DayTrace:
    """One day of consumption/production samples [kW]."""

    day_id: str
    p_cons: np.ndarray
    p_pv: np.ndarray

    def __post_init__(self):
        cons = np.asarray(self.p_cons, dtype=float)
        pv = np.asarray(self.p_pv, dtype=float)
        object.__setattr__(self, "p_cons", cons)
        object.__setattr__(self, "p_pv", pv)
        if cons.ndim != 1 or cons.shape != pv.shape:
            raise ValueError("p_cons and p_pv must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(cons)) and np.all(np.isfinite(pv))):
            raise ValueError(f"day {self.day_id}: non-finite power values")
        if np.any(cons < 0) or np.any(pv < 0):
            raise NegativePower(f"day {self.day_id}: negative power values")

    def __len__(self) -> int:
        return len(self.p_cons)

    @property
    def delta(self) -> np.ndarray:
        """Consumption minus production per step [kW]."""
        return self.p_cons - self.p_pv


CSV_HEADER = ["day_id", "step", "p_cons_kw", "p_pv_kw"]


def load_csv(path) -> list[DayTrace]:
    """Load day traces from a CSV file, in file order.

    All days in one file must have the same number of contiguous steps.

    Raises:
        ParseError: malformed rows (with the 1-based line number).
        MissingStep: steps not contiguous 0..H-1 or day length mismatch.
        NegativePower: negative consumption or production.
    """
    days: list[DayTrace] = []
    current_id: str | None = None
    cons: list[float] = []
    pv: list[float] = []
    seen: set[str] = set()

    def flush(line_no: int):
        nonlocal current_id, cons, pv
        if current_id is None:
            return
        if days and len(days[0]) != len(cons):
            raise MissingStep(
                f"day {current_id} has {len(cons)} steps, expected {len(days[0])}"
            )
        days.append(DayTrace(current_id, np.array(cons), np.array(pv)))
        current_id, cons, pv = None, [], []

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1)
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line_no)
            day_id = row[0].strip()
            try:
                step = int(row[1])
                c = float(row[2])
                p = float(row[3])
            except ValueError:
                raise ParseError(f"bad numeric fields {row[1:]!r}", line_no)
            if not (math.isfinite(c) and math.isfinite(p)):
                raise ParseError("non-finite power value", line_no)
            if c < 0 or p < 0:
                raise NegativePower(f"line {line_no}: negative power for day {day_id}")
            if day_id != current_id:
                flush(line_no)
                if day_id in seen:
                    raise ParseError(f"day {day_id} appears twice", line_no)
                seen.add(day_id)
                current_id = day_id
            if step != len(cons):
                raise MissingStep(
                    f"day {day_id}: expected step {len(cons)}, got {step} (line {line_no})"
                )
            cons.append(c)
            pv.append(p)
    flush(-1)
    return days


def save_csv(days: list[DayTrace], path) -> None:
    """Write day traces in the load_csv format (round-trip exact)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for day in days:
            for step in range(len(day)):
                writer.writerow(
                    [day.day_id, step, repr(float(day.p_cons[step])), repr(float(day.p_pv[step]))]
                )


def synth_days(
    n: int,
    seed: int,
    horizon: int = 144,
    base_load_kw: tuple[float, float] = (2.0, 4.0),
    plateau_kw: tuple[float, float] = (8.0, 18.0),
    work_hours: tuple[float, float] = (7.0, 19.0),
    noise_kw: float = 1.0,
    pv_peak_kw: float = 25.0,
    pv_hours: tuple[float, float] = (6.5, 19.5),
    dip_probability: float = 0.4,
    id_prefix: str = "day",
) -> list[DayTrace]:
    """Deterministic synthetic working days.

    Production is a clear-sky bell over the daylight window, scaled by
    a per-day factor, with an occasional mid-day dip; consumption is a
    base load plus a business-hours plateau with smooth ramps and
    bounded noise. Each day derives its own RNG stream from
    (seed, day index), so generation order does not matter.
    """
    if n < 1:
        raise EmptyInput("need n >= 1 synthetic days")
    hours = (np.arange(horizon) + 0.5) * (24.0 / horizon)
    days = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])

        rise, set_ = pv_hours
        up = (hours - rise) / (set_ - rise)
        bell = np.where((up > 0) & (up < 1), np.sin(np.pi * np.clip(up, 0, 1)) ** 2, 0.0)
        pv = pv_peak_kw * rng.uniform(0.35, 1.0) * bell
        if rng.uniform() < dip_probability:
            center = rng.uniform(10.0, 16.0)
            width = rng.uniform(0.5, 2.0)
            depth = rng.uniform(0.4, 0.9)
            pv *= 1.0 - depth * np.exp(-0.5 * ((hours - center) / width) ** 2)

        base = rng.uniform(*base_load_kw)
        amp = rng.uniform(*plateau_kw)
        lo, hi = work_hours
        ramp = 1.0  # hours of smooth ramp at the plateau edges
        plateau = np.clip((hours - lo) / ramp, 0.0, 1.0) * np.clip((hi - hours) / ramp, 0.0, 1.0)
        plateau = np.minimum(plateau, 1.0)
        cons = base + amp * plateau + rng.uniform(-noise_kw, noise_kw, size=horizon)
        cons = np.maximum(cons, 0.0)

        days.append(DayTrace(f"{id_prefix}{i:04d}", cons, np.maximum(pv, 0.0)))
    return days


def data_bounds(
    days: list[DayTrace],
    delta_step: float = 2.0,
    p_step: float = 1.0,
    a_max: float = 20.0,
) -> tuple[float, float, float]:
    """Grid bounds extracted from the data.

    Returns (delta_min, delta_max, p_max_suggestion): the range of
    consumption minus production rounded outward to delta grid steps,
    and the highest possible bought power (data peak plus full charge)
    rounded up to a peak grid step.
    """
    if not days:
        raise EmptyInput("no days")
    deltas = np.concatenate([d.delta for d in days])
    lo = math.floor(deltas.min() / delta_step) * delta_step
    hi = math.ceil(deltas.max() / delta_step) * delta_step
    peak = max(float(deltas.max()), 0.0) + a_max
    p_max = math.ceil(peak / p_step) * p_step
    return float(lo), float(hi), float(p_max)


@dataclass(frozen=True)
class BillingPeriod:
    """Consecutive test days billed together; `short` flags a trailing
    period with fewer than the nominal number of days."""

    index: int
    days: tuple[DayTrace, ...]
    short: bool


@dataclass(frozen=True)
class Dataset:
    train: tuple[DayTrace, ...]
    test: tuple[DayTrace, ...]
    billing_periods: tuple[BillingPeriod, ...] = field(default=())

    def __post_init__(self):
        train_ids = {d.day_id for d in self.train}
        if any(d.day_id in train_ids for d in self.test):
            raise ValueError("train and test sets must be disjoint")


def group_billing_periods(days: list[DayTrace] | tuple[DayTrace, ...], bp_len: int) -> tuple[BillingPeriod, ...]:
    """Group consecutive days into billing periods of `bp_len` days."""
    if bp_len < 1:
        raise ValueError("bp_len must be >= 1")
    periods = []
    for k in range(0, len(days), bp_len):
        chunk = tuple(days[k : k + bp_len])
        periods.append(BillingPeriod(len(periods), chunk, short=len(chunk) < bp_len))
    return tuple(periods)


def split_dataset(days: list[DayTrace], n_train: int, bp_len: int = 20) -> Dataset:
    """First `n_train` days train, the rest test, grouped into BPs."""
    if n_train < 1 or n_train >= len(days) + 1:
        raise EmptyInput(f"cannot take {n_train} training days from {len(days)}")
    train = tuple(days[:n_train])
    test = tuple(days[n_train:])
    return Dataset(train, test, group_billing_periods(test, bp_len))
