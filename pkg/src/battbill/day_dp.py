"""Exact backward induction over one known day.

With the day's consumption and production fixed, the transition is
deterministic and the optimal (or fixed-policy) Q-function is computed
layer by layer from the horizon down to 0. Within a known day the delta
coordinate is a function of the time step, so the per-day table only
spans (tau, soc, peak, action); for energy-only costs the peak axis
collapses to size 1 because values do not depend on it.

Policies consumed here are duck-typed: they expose
`actions_for_layer(tau, day, grid, battery, tariff, p_axis) -> (S, P)`
returning a feasible action index for every (soc, peak) cell, resolving
their own fallback for states missing from the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .battery import BatteryParams
from .data import DayTrace
from .grid import (
    CostModel,
    DiscreteState,
    StateGrid,
    StepOutcome,
    step_env,
    transition_table,
)
from .tariff import (
    BillBreakdown,
    TariffSchedule,
    day_energy_charge,
    demand_charge,
    step_energy_cost,
    trace_peak,
)


class BadTraceLength(ValueError):
    """Day trace does not match the grid horizon."""


@dataclass(frozen=True)
class QDay:
    """Dense per-day Q table over (tau, soc, peak, action).

    Infeasible actions hold +inf; the terminal convention is
    Q(H, ., .) = 0. When `uses_peak` is False the peak axis has size 1
    and `at` maps every peak index onto it.
    """

    values: np.ndarray          # (H, S, P_eff, A)
    day_delta_idx: np.ndarray   # (H,) delta grid index per step
    uses_peak: bool
    day_id: str

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def at(self, tau: int, soc_idx: int, p_idx: int, a_idx: int) -> float:
        return float(self.values[tau, soc_idx, p_idx if self.uses_peak else 0, a_idx])

    def greedy_actions(self, tau: int, tie_order: np.ndarray) -> np.ndarray:
        """(S, P_eff) argmin actions using the |a|-then-a tie rule."""
        ordered = self.values[tau][:, :, tie_order]
        return tie_order[np.argmin(ordered, axis=-1)]


def tie_argmin(values: np.ndarray, tie_order: np.ndarray) -> np.ndarray:
    """Argmin along the last (action) axis with deterministic ties.

    `tie_order` lists action indices by (|a|, a); np.argmin keeps the
    first minimum, which realizes the tie rule exactly.
    """
    return tie_order[np.argmin(values[..., tie_order], axis=-1)]


def _check_day(day: DayTrace, grid: StateGrid) -> None:
    if len(day) != grid.horizon:
        raise BadTraceLength(
            f"day {day.day_id} has {len(day)} samples, horizon is {grid.horizon}"
        )


def _cost_layers(day: DayTrace, grid: StateGrid, battery: BatteryParams, tariff: TariffSchedule):
    """Meter power and per-step energy cost for every (tau, action).

    Arithmetic mirrors the scalar step_env paths operation for
    operation so the vectorized solver is bit-identical to it.
    """
    avals = grid.action.values
    charge = np.where(avals > 0.0, avals, 0.0)
    rho_disch = battery.rho_d * np.where(avals < 0.0, -avals, 0.0)
    meter = (day.delta[:, None] + charge[None, :]) - rho_disch[None, :]
    bought = np.where(meter > 0.0, meter, 0.0)
    sold = np.where(meter < 0.0, -meter, 0.0)
    dt_h = grid.dt_hours
    c1 = tariff.pp_per_step[:, None] * bought * dt_h - tariff.sp_per_step[:, None] * sold * dt_h
    return meter, bought, c1


def _peak_layer(bought_t: np.ndarray, grid: StateGrid, rate: float):
    """Per-(peak, action) next peak index and increment cost at one tau."""
    p_vals = grid.peak.values
    raw = np.maximum(p_vals[:, None], bought_t[None, :])
    p_next = grid.peak.snap_array(raw)
    p_cost = rate * (grid.peak.lo + grid.peak.step * p_next - p_vals[:, None])
    return p_next, p_cost


def solve_day_optimal(
    day: DayTrace,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
) -> QDay:
    """Optimal per-day Q by backward induction.

    Every (soc, peak) cell is swept at every step; the continuation is
    the minimum over feasible next actions, 0 at the horizon.
    """
    _check_day(day, grid)
    table = transition_table(grid, battery)
    S = grid.soc.n
    A = grid.action.n
    P = grid.peak.n if cost.uses_peak else 1
    H = grid.horizon

    meter, bought, c1 = _cost_layers(day, grid, battery, tariff)
    feas = table.feasible[:, None, :]  # (S, 1, A)
    xn = table.x_next_idx[:, None, :]  # (S, 1, A)

    values = np.empty((H, S, P, A), dtype=float)
    v_next = np.zeros((S, P), dtype=float)
    for t in range(H - 1, -1, -1):
        if cost.uses_peak:
            p_next, p_cost = _peak_layer(bought[t], grid, cost.peak_rate)
            cont = v_next[xn, p_next[None, :, :]]
            q = (c1[t][None, None, :] + p_cost[None, :, :]) + cont
        else:
            cont = v_next[xn, np.zeros((1, 1, A), dtype=np.int64)]
            q = c1[t][None, None, :] + cont
        q = np.where(feas, q, np.inf)
        values[t] = q
        v_next = q.min(axis=2)

    return QDay(values, grid.delta.snap_array(day.delta), cost.uses_peak, day.day_id)


def evaluate_day_policy(
    day: DayTrace,
    policy,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
) -> QDay:
    """Fixed-policy per-day Q: the continuation follows the policy's
    action at tau + 1 instead of the minimum."""
    _check_day(day, grid)
    table = transition_table(grid, battery)
    S = grid.soc.n
    A = grid.action.n
    P = grid.peak.n if cost.uses_peak else 1
    H = grid.horizon

    meter, bought, c1 = _cost_layers(day, grid, battery, tariff)
    feas = table.feasible[:, None, :]
    xn = table.x_next_idx[:, None, :]

    values = np.empty((H, S, P, A), dtype=float)
    w_next = np.zeros((S, P), dtype=float)  # Q^pi(t+1, s, p, pi(t+1, s, p))
    for t in range(H - 1, -1, -1):
        if cost.uses_peak:
            p_next, p_cost = _peak_layer(bought[t], grid, cost.peak_rate)
            cont = w_next[xn, p_next[None, :, :]]
            q = (c1[t][None, None, :] + p_cost[None, :, :]) + cont
        else:
            cont = w_next[xn, np.zeros((1, 1, A), dtype=np.int64)]
            q = c1[t][None, None, :] + cont
        q = np.where(feas, q, np.inf)
        values[t] = q
        a_sel = policy.actions_for_layer(t, day, grid, battery, tariff, P)
        w_next = np.take_along_axis(q, a_sel[:, :, None], axis=2)[:, :, 0]

    return QDay(values, grid.delta.snap_array(day.delta), cost.uses_peak, day.day_id)


@dataclass(frozen=True)
class RolloutResult:
    trajectory: tuple[StepOutcome, ...]
    total_cost: float
    bill: BillBreakdown
    meter: np.ndarray
    final_state: DiscreteState


def rollout(
    day: DayTrace,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
    policy_or_q,
    start_state: DiscreteState | None = None,
) -> RolloutResult:
    """Simulate the day forward and price the resulting meter trace.

    `policy_or_q` may be a callable state -> action index, a policy
    with `action_index(state, day, grid, battery, tariff)`, or a sparse
    Q table with `argmin_action(state)` (missing keys fall back to
    a = 0). The total cost is the sum of immediate costs; the bill is
    computed from the exact meter trace, with the demand part priced at
    the cost model's rate.
    """
    if start_state is None:
        start_state = DiscreteState(
            0, grid.soc.snap(0.0), int(grid.delta.snap(float(day.delta[0]))), 0
        )
    choose = _as_chooser(policy_or_q, day, grid, battery, tariff)

    state = start_state
    outcomes = []
    total = 0.0
    meter = np.empty(grid.horizon, dtype=float)
    for t in range(start_state.tau, grid.horizon):
        out = step_env(state, choose(state), day, grid, battery, tariff, cost)
        outcomes.append(out)
        total += out.cost
        meter[t] = out.meter_kw
        state = out.next_state

    meter = meter[start_state.tau :]
    energy = day_energy_charge(meter, tariff) if start_state.tau == 0 else _partial_energy(
        meter, tariff, start_state.tau
    )
    demand = demand_charge(trace_peak(meter), cost.peak_rate) if cost.uses_peak else 0.0
    breakdown = BillBreakdown.assemble(energy, demand, tariff.fees)
    return RolloutResult(tuple(outcomes), total, breakdown, meter, state)


def _partial_energy(meter: np.ndarray, tariff: TariffSchedule, start: int) -> float:
    return sum(
        step_energy_cost(
            float(m), float(tariff.pp_per_step[start + k]), float(tariff.sp_per_step[start + k]), tariff.dt_hours
        )
        for k, m in enumerate(meter)
    )


def _as_chooser(policy_or_q, day, grid, battery, tariff) -> Callable[[DiscreteState], int]:
    if callable(policy_or_q):
        return policy_or_q
    if hasattr(policy_or_q, "action_index"):
        return lambda s: policy_or_q.action_index(s, day, grid, battery, tariff)
    if hasattr(policy_or_q, "argmin_action"):
        zero = grid.zero_action_idx

        def choose(s: DiscreteState) -> int:
            a = policy_or_q.argmin_action(s)
            return zero if a is None else a

        return choose
    raise TypeError(f"cannot derive an action chooser from {type(policy_or_q)!r}")
