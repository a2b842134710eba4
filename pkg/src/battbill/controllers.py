"""Baseline and fallback controllers.

Controllers are pure functions from a small context snapshot to an
action in kW (positive = charge). The lazy controller does nothing; the
rule-based heuristic charges on solar surplus, discharges deficits only
on-peak, and empties the battery after the last on-peak step of the
day. The recoupling wrapper overrides actions in that same end-of-day
window to pre-charge for the next day without raising the recorded
peak.
"""

from __future__ import annotations

from dataclasses import dataclass

from .battery import BatteryParams, action_bounds, is_feasible
from .data import DayTrace
from .grid import StateGrid
from .tariff import TariffSchedule, p_meter


@dataclass(frozen=True)
class ControllerContext:
    """Snapshot of everything a rule-based controller may look at."""

    tau: int
    x: float            # SOC in [0, 1]
    peak: float         # recorded peak so far [kW]
    p_cons: float       # consumption at tau [kW]
    p_pv: float         # production at tau [kW]
    on_peak: bool
    past_last_on_peak: bool  # inside the last off-peak window of the day
    a_min: float        # most negative allowed action [kW]
    a_max: float
    rho_d: float
    dt_seconds: float


def make_context(
    tau: int,
    x: float,
    peak: float,
    day: DayTrace,
    tariff: TariffSchedule,
    battery: BatteryParams,
    grid: StateGrid,
) -> ControllerContext:
    a_min, a_max = action_bounds(battery, grid.soc.values)
    last_on_peak = tariff.last_on_peak_step()
    return ControllerContext(
        tau=tau,
        x=x,
        peak=peak,
        p_cons=float(day.p_cons[tau]),
        p_pv=float(day.p_pv[tau]),
        on_peak=bool(tariff.on_peak[tau]),
        past_last_on_peak=tau > last_on_peak,
        a_min=a_min,
        a_max=a_max,
        rho_d=battery.rho_d,
        dt_seconds=grid.dt_seconds,
    )


def lazy(ctx: ControllerContext, battery: BatteryParams | None = None) -> float:
    """Do nothing."""
    return 0.0


def heuristic(ctx: ControllerContext, battery: BatteryParams) -> float:
    """Rule-based dispatch.

    On solar surplus, charge exactly the surplus (capped at a_max).
    On deficit during on-peak hours, discharge the deficit grossed up
    by 1/rho_d so the meter sees zero net draw. After the last on-peak
    step, discharge at full power until empty. The result is clipped to
    a feasible action.
    """
    if ctx.p_pv >= ctx.p_cons:
        if ctx.x >= 1.0:
            return 0.0
        desired = min(ctx.p_pv - ctx.p_cons, ctx.a_max)
    elif ctx.on_peak:
        if ctx.x <= 0.0:
            return 0.0
        desired = -min((ctx.p_cons - ctx.p_pv) / ctx.rho_d, -ctx.a_min)
    elif ctx.past_last_on_peak:
        if ctx.x <= 0.0:
            return 0.0
        desired = ctx.a_min
    else:
        return 0.0
    return _clip_feasible(desired, ctx, battery)


def _clip_feasible(desired: float, ctx: ControllerContext, battery: BatteryParams) -> float:
    """Largest same-direction action not beyond `desired` that the
    battery can actually run for one step; 0 when none exists."""
    if desired == 0.0 or is_feasible(battery, ctx.x, desired, ctx.dt_seconds):
        return desired
    step = 0.5 if abs(desired) < 5.0 else 1.0
    mag = abs(desired) - step
    sign = 1.0 if desired > 0 else -1.0
    while mag > 0.0:
        if is_feasible(battery, ctx.x, sign * mag, ctx.dt_seconds):
            return sign * mag
        mag -= step
    return 0.0


def recouple(
    base_action: float,
    ctx: ControllerContext,
    battery: BatteryParams,
    grid: StateGrid,
) -> float:
    """End-of-day recoupling: pre-charge for the next day.

    Inside the last off-peak window the base action is replaced by the
    largest feasible grid charge whose meter power stays at or below
    the recorded peak; grid actions are searched descending. Outside
    the window the base action passes through unchanged. Returns 0 when
    no non-negative action fits under the peak.
    """
    if not ctx.past_last_on_peak:
        return base_action
    for a in sorted(grid.action.values, reverse=True):
        a = float(a)
        if a < 0.0:
            break
        meter = p_meter(ctx.p_cons, ctx.p_pv, a, ctx.rho_d)
        if max(meter, 0.0) <= ctx.peak and is_feasible(battery, ctx.x, a, ctx.dt_seconds):
            return a
    return 0.0
