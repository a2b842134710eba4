"""Discretized state/action lattice and the one-step environment.

State is (tau, soc, delta, peak) on uniform grids; actions are a grid of
signed powers. The transition under known day data is deterministic:
SOC integrates the battery model, delta of the next step comes from the
day trace, and the recorded peak ratchets up with the bought power.

Step costs come in two flavours: plain per-step energy cost, or energy
cost plus a demand rate applied to the increment of the recorded peak.
The realized peak lives on the peak grid, and the increment is costed
after snapping, so that costs telescope exactly along any tabular
trajectory.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .battery import BatteryParams, action_bounds, is_feasible, soc_derivative, step_soc
from .tariff import TariffSchedule, p_meter, step_energy_cost


class InfeasibleAction(ValueError):
    """Action not allowed in this state."""


class TimeOverflow(ValueError):
    """Transition attempted at or past the horizon."""


@dataclass(frozen=True)
class GridAxis:
    """Uniform grid `lo + i*step`, endpoints included.

    If the span is not a whole number of steps the top is trimmed to
    the last full step.
    """

    lo: float
    step: float
    n: int

    @classmethod
    def from_range(cls, lo: float, hi: float, step: float) -> "GridAxis":
        if step <= 0:
            raise ValueError("grid step must be > 0")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        if n < 1:
            raise ValueError(f"empty grid axis [{lo}, {hi}] step {step}")
        return cls(lo, step, n)

    @property
    def values(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.n)

    def value(self, idx: int) -> float:
        return self.lo + self.step * idx

    def snap(self, value: float) -> int:
        """Nearest index, ties toward the smaller one, clamped in range."""
        t = (value - self.lo) / self.step
        idx = int(math.ceil(t - 0.5))
        return min(max(idx, 0), self.n - 1)

    def snap_array(self, values: np.ndarray) -> np.ndarray:
        t = (np.asarray(values, dtype=float) - self.lo) / self.step
        idx = np.ceil(t - 0.5).astype(np.int64)
        return np.clip(idx, 0, self.n - 1)


def snap(value: float, axis: GridAxis) -> int:
    """Nearest grid index for `value` on `axis` (ties toward smaller)."""
    return axis.snap(value)


@dataclass(frozen=True)
class StateGrid:
    """All axes of the discretized problem plus the step length.

    Defaults follow the full-resolution setup: SOC step 0.01, delta in
    [-60, 60] step 2, peak in [0, 100] step 1, actions in [-20, 20]
    step 1, horizon 144 steps of 600 s.
    """

    horizon: int = 144
    dt_seconds: float = 600.0
    soc: GridAxis = GridAxis(0.0, 0.01, 101)
    delta: GridAxis = GridAxis(-60.0, 2.0, 61)
    peak: GridAxis = GridAxis(0.0, 1.0, 101)
    action: GridAxis = GridAxis(-20.0, 1.0, 41)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt_seconds <= 0:
            raise ValueError("dt_seconds must be > 0")
        if not any(v == 0.0 for v in self.action.values):
            raise ValueError("action grid must contain 0 kW")

    @property
    def dt_hours(self) -> float:
        return self.dt_seconds / 3600.0

    @property
    def zero_action_idx(self) -> int:
        return int(np.flatnonzero(self.action.values == 0.0)[0])

    def action_tie_order(self) -> np.ndarray:
        """Action indices ordered by (|a|, a); argmin over values taken
        in this order realizes the smaller-|a|-then-smaller-a tie rule."""
        vals = self.action.values
        return np.array(
            sorted(range(len(vals)), key=lambda i: (abs(vals[i]), vals[i])),
            dtype=np.int64,
        )

    @classmethod
    def desk(cls, horizon: int = 144, dt_seconds: float = 600.0) -> "StateGrid":
        """Coarse preset that keeps tests fast."""
        return cls(
            horizon=horizon,
            dt_seconds=dt_seconds,
            soc=GridAxis.from_range(0.0, 1.0, 0.05),
            delta=GridAxis.from_range(-60.0, 60.0, 10.0),
            peak=GridAxis.from_range(0.0, 100.0, 5.0),
            action=GridAxis.from_range(-20.0, 20.0, 5.0),
        )


class DiscreteState(NamedTuple):
    tau: int
    soc_idx: int
    delta_idx: int
    p_idx: int


@dataclass(frozen=True)
class CostModel:
    """Immediate-cost flavour for one problem.

    `peak_rate` [$/kW] prices increments of the recorded peak;
    `uses_peak` False means pure energy cost, in which case values are
    independent of the peak coordinate and tables collapse that axis.
    """

    peak_rate: float = 0.0
    uses_peak: bool = False

    def __post_init__(self):
        if self.peak_rate < 0:
            raise ValueError("peak_rate must be >= 0")

    @classmethod
    def energy_only(cls) -> "CostModel":
        return cls(0.0, False)

    @classmethod
    def peak_increment(cls, rate: float) -> "CostModel":
        return cls(rate, True)


class StepOutcome(NamedTuple):
    next_state: DiscreteState
    cost: float
    meter_kw: float
    new_peak: float


class ResetBoundary(enum.Enum):
    DAY_START = "day_start"
    MONTH_START = "month_start"


class ResetMode(enum.Enum):
    DAILY = "daily"
    MONTHLY = "monthly"


def reset_peak(state: DiscreteState, boundary: ResetBoundary, mode: ResetMode) -> DiscreteState:
    """Apply peak-reset semantics at a billing boundary.

    Daily mode zeroes the recorded peak at every day start (a month
    start is also a day start); monthly mode only at a month start.
    """
    if mode is ResetMode.DAILY or boundary is ResetBoundary.MONTH_START:
        return state._replace(p_idx=0)
    return state


@dataclass(frozen=True)
class TransitionTable:
    """Cached SOC transition for every (soc index, action index) pair.

    Day- and time-independent: the battery dynamics see only SOC and
    action. `feasible` also enforces the global action bounds derived
    from the power-limit curves.
    """

    x_next_idx: np.ndarray   # (S, A) int
    feasible: np.ndarray     # (S, A) bool
    x_next: np.ndarray       # (S, A) float, exact post-integration SOC
    a_min: float
    a_max: float


def _transition_table(grid: StateGrid, battery: BatteryParams) -> TransitionTable:
    soc_vals = grid.soc.values
    act_vals = grid.action.values
    S, A = len(soc_vals), len(act_vals)
    a_min, a_max = action_bounds(battery, soc_vals)

    x = np.repeat(soc_vals, A).astype(float)        # flattened (S, A)
    a = np.tile(act_vals, S).astype(float)
    n = max(1, int(round(grid.dt_seconds / 10.0)))
    h = grid.dt_seconds / n
    saturated = np.zeros(x.shape, dtype=bool)
    domain_err = np.zeros(x.shape, dtype=bool)

    charge = a > 0
    discharge = a < 0
    for _ in range(n):
        u = battery.u_ocv(x)
        i_bat = np.zeros_like(x)
        if charge.any():
            r = battery.r_charge(x[charge])
            p_w = a[charge] * 1000.0
            i_bat[charge] = (-u[charge] + np.sqrt(u[charge] ** 2 + 4.0 * r * p_w)) / (2.0 * r)
        if discharge.any():
            r = battery.r_discharge(x[discharge])
            p_w = -a[discharge] * 1000.0
            disc = u[discharge] ** 2 - 4.0 * r * p_w
            bad = disc < 0
            disc = np.where(bad, 0.0, disc)
            i_bat[discharge] = (-u[discharge] + np.sqrt(disc)) / (2.0 * r)
            domain_err[discharge] |= bad
        x = x + h * (i_bat / battery.q_nominal)
        below, above = x < 0.0, x > 1.0
        saturated |= below | above
        x = np.where(below, 0.0, np.where(above, 1.0, x))

    within_bounds = (a >= a_min) & (a <= a_max)
    feasible = within_bounds & ~saturated & ~domain_err
    x_next = x.reshape(S, A)
    return TransitionTable(
        x_next_idx=grid.soc.snap_array(x_next),
        feasible=feasible.reshape(S, A),
        x_next=x_next,
        a_min=a_min,
        a_max=a_max,
    )


@lru_cache(maxsize=8)
def _cached_table(grid: StateGrid, battery: BatteryParams) -> TransitionTable:
    return _transition_table(grid, battery)


def transition_table(grid: StateGrid, battery: BatteryParams) -> TransitionTable:
    """Memoized per (grid, battery); both are frozen dataclasses."""
    return _cached_table(grid, battery)


def allowed_actions(state: DiscreteState, grid: StateGrid, battery: BatteryParams) -> set[int]:
    """Set of feasible action indices in `state`; always contains a = 0."""
    table = transition_table(grid, battery)
    return set(np.flatnonzero(table.feasible[state.soc_idx]).tolist())


def nearest_feasible_action(
    desired_kw: float, soc_idx: int, grid: StateGrid, battery: BatteryParams
) -> int:
    """Grid action index closest to `desired_kw` among feasible ones.

    Ties go to the smaller |a|, then the smaller a.
    """
    table = transition_table(grid, battery)
    vals = grid.action.values
    best = None
    for i in np.flatnonzero(table.feasible[soc_idx]):
        key = (abs(vals[i] - desired_kw), abs(vals[i]), vals[i])
        if best is None or key < best[0]:
            best = (key, int(i))
    if best is None:  # cannot happen: a = 0 is always feasible
        return grid.zero_action_idx
    return best[1]


def step_env(
    state: DiscreteState,
    a_idx: int,
    day,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
) -> StepOutcome:
    """One deterministic environment step under known day data.

    Reference scalar implementation; the day solver vectorizes the same
    arithmetic. The meter power uses the day's exact consumption and
    production at tau, the next delta is snapped from the trace at
    tau + 1 (don't-care at the horizon), and the realized new peak is
    the snapped grid value whose increment is costed.

    Raises:
        TimeOverflow: state.tau is at or past the horizon.
        InfeasibleAction: the action is not allowed in this state.
    """
    if state.tau >= grid.horizon:
        raise TimeOverflow(f"tau {state.tau} >= horizon {grid.horizon}")
    table = transition_table(grid, battery)
    if not table.feasible[state.soc_idx, a_idx]:
        raise InfeasibleAction(
            f"action {grid.action.value(a_idx)} kW infeasible at soc index {state.soc_idx}"
        )

    tau = state.tau
    a_kw = grid.action.value(a_idx)
    meter = p_meter(float(day.p_cons[tau]), float(day.p_pv[tau]), a_kw, battery.rho_d)
    c = step_energy_cost(
        meter, float(tariff.pp_per_step[tau]), float(tariff.sp_per_step[tau]), grid.dt_hours
    )

    # step_soc result memoized per grid cell (bit-identical to the scalar path)
    x_next = float(table.x_next[state.soc_idx, a_idx])
    if tau + 1 < grid.horizon:
        delta_next = float(day.p_cons[tau + 1]) - float(day.p_pv[tau + 1])
    else:
        delta_next = 0.0  # terminal don't-care
    p_val = grid.peak.value(state.p_idx)
    bought = meter if meter > 0.0 else 0.0
    new_p_idx = grid.peak.snap(max(p_val, bought))
    new_peak = grid.peak.value(new_p_idx)
    if cost.uses_peak:
        c += cost.peak_rate * (new_peak - p_val)

    nxt = DiscreteState(
        tau=tau + 1,
        soc_idx=int(grid.soc.snap(x_next)),
        delta_idx=int(grid.delta.snap(delta_next)),
        p_idx=int(new_p_idx),
    )
    return StepOutcome(nxt, c, meter, new_peak)
