"""Meter power balance and all monetary computations.

Covers the per-step energy cost under time-of-use prices, daily and
monthly demand charges on the maximum bought power, and full bill
assembly. Money is in $, power in kW, energy prices in $/kWh, demand
rates in $/kW.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class LengthMismatch(ValueError):
    """Trace length does not match the tariff horizon."""


class NegativePeak(ValueError):
    """Demand peaks cannot be negative."""


class EmptyInput(ValueError):
    """At least one trace/day is required."""


class BillingMode(enum.Enum):
    ENERGY_ONLY = "energy_only"
    DAILY = "daily"
    MONTHLY = "monthly"


@dataclass(frozen=True)
class TariffSchedule:
    """Per-step purchase/sell prices plus demand-charge rates.

    Prices are stored per step (length-H arrays) so arbitrary TOU
    shapes load from config. `on_peak` is a boolean mask over steps,
    `dt_hours` the step length in hours.
    """

    pp_per_step: np.ndarray
    sp_per_step: np.ndarray
    on_peak: np.ndarray
    mu_daily: float
    mu_monthly: float
    fees: float
    dt_hours: float

    def __post_init__(self):
        pp = np.asarray(self.pp_per_step, dtype=float)
        sp = np.asarray(self.sp_per_step, dtype=float)
        mask = np.asarray(self.on_peak, dtype=bool)
        object.__setattr__(self, "pp_per_step", pp)
        object.__setattr__(self, "sp_per_step", sp)
        object.__setattr__(self, "on_peak", mask)
        if pp.shape != sp.shape or pp.shape != mask.shape or pp.ndim != 1:
            raise ValueError("pp, sp and on_peak must be 1-D arrays of equal length")
        if np.any(pp < 0) or np.any(sp < 0):
            raise ValueError("prices must be >= 0")
        if self.mu_daily < 0 or self.mu_monthly < 0:
            raise ValueError("demand rates must be >= 0")
        if self.dt_hours <= 0:
            raise ValueError("dt_hours must be > 0")

    @property
    def horizon(self) -> int:
        return len(self.pp_per_step)

    def last_on_peak_step(self) -> int:
        """Index of the last on-peak step, -1 if the day has none."""
        idx = np.flatnonzero(self.on_peak)
        return int(idx[-1]) if len(idx) else -1


def parse_window(text: str) -> tuple[float, float]:
    """Parse an `HH:MM-HH:MM` window into (start, end) hours."""
    try:
        start, end = text.strip().split("-")
        sh, sm = start.split(":")
        eh, em = end.split(":")
        return int(sh) + int(sm) / 60.0, int(eh) + int(em) / 60.0
    except Exception as exc:
        raise ValueError(f"bad on-peak window {text!r}, expected HH:MM-HH:MM") from exc


def build_tou_schedule(
    horizon: int = 144,
    dt_hours: float = 1.0 / 6.0,
    on_peak_windows: tuple[tuple[float, float], ...] = ((6.0, 9.0), (18.0, 21.0)),
    pp_on: float = 0.1936,
    pp_off: float = 0.1330,
    sp: float = 0.098,
    mu_daily: float = 0.5,
    mu_monthly: float = 10.0,
    fees: float = 0.0,
) -> TariffSchedule:
    """Build a TOU schedule from clock windows.

    A step is on-peak iff its start time falls inside a half-open
    [start, end) window. Defaults: on-peak 6-9 am and 6-9 pm at
    0.1936 $/kWh, off-peak 0.1330 $/kWh, selling 0.098 $/kWh,
    mu_d = 0.5 $/kW and mu_m = 10 $/kW.
    """
    starts = np.arange(horizon) * dt_hours
    mask = np.zeros(horizon, dtype=bool)
    for lo, hi in on_peak_windows:
        mask |= (starts >= lo) & (starts < hi)
    pp = np.where(mask, pp_on, pp_off)
    sp_arr = np.full(horizon, sp, dtype=float)
    return TariffSchedule(pp, sp_arr, mask, mu_daily, mu_monthly, fees, dt_hours)


@dataclass(frozen=True)
class BillBreakdown:
    """One bill split into its components; energy may be negative."""

    energy_charge: float
    demand_charge: float
    fees: float
    total: float

    @classmethod
    def assemble(cls, energy: float, demand: float, fees: float) -> "BillBreakdown":
        return cls(energy, demand, fees, fees + energy + demand)


def p_meter(p_cons: float, p_pv: float, a: float, rho_d: float) -> float:
    """Net power at the meter [kW]; positive = bought, negative = sold.

    Consumption minus production, plus charging power, minus the
    discharging power scaled by the discharge efficiency.
    """
    charge = a if a > 0.0 else 0.0
    discharge = -a if a < 0.0 else 0.0
    return p_cons - p_pv + charge - rho_d * discharge


def step_energy_cost(meter_kw: float, pp: float, sp: float, dt_hours: float) -> float:
    """Energy cost [$] of one step with constant meter power."""
    if dt_hours <= 0:
        raise ValueError("dt_hours must be > 0")
    bought = meter_kw if meter_kw > 0.0 else 0.0
    sold = -meter_kw if meter_kw < 0.0 else 0.0
    return pp * bought * dt_hours - sp * sold * dt_hours


def day_energy_charge(meter_trace, tariff: TariffSchedule) -> float:
    """Sum of per-step energy costs over one day's meter trace."""
    trace = np.asarray(meter_trace, dtype=float)
    if trace.shape != (tariff.horizon,):
        raise LengthMismatch(
            f"trace has {trace.shape} values, tariff horizon is {tariff.horizon}"
        )
    total = 0.0
    for t in range(tariff.horizon):
        total += step_energy_cost(
            float(trace[t]), float(tariff.pp_per_step[t]), float(tariff.sp_per_step[t]), tariff.dt_hours
        )
    return total


def demand_charge(peak: float, mu: float) -> float:
    """Demand charge [$] = rate times the recorded peak [kW]."""
    if peak < 0:
        raise NegativePeak(f"peak {peak} < 0")
    return mu * peak


def trace_peak(meter_trace) -> float:
    """Highest bought power in a trace; 0 when nothing is bought."""
    trace = np.asarray(meter_trace, dtype=float)
    return float(max(trace.max(initial=0.0), 0.0))


def bill(traces, tariff: TariffSchedule, mode: BillingMode) -> BillBreakdown:
    """Bill for a list of day meter traces under the given mode.

    ENERGY_ONLY has no demand charge. DAILY charges mu_d on each day's
    peak. MONTHLY charges mu_m once on the peak over all days (the
    traces must cover the full billing period).
    """
    if len(traces) == 0:
        raise EmptyInput("no day traces")
    energy = sum(day_energy_charge(t, tariff) for t in traces)
    if mode is BillingMode.ENERGY_ONLY:
        demand = 0.0
    elif mode is BillingMode.DAILY:
        demand = sum(demand_charge(trace_peak(t), tariff.mu_daily) for t in traces)
    else:
        demand = demand_charge(max(trace_peak(t) for t in traces), tariff.mu_monthly)
    return BillBreakdown.assemble(energy, demand, tariff.fees)
