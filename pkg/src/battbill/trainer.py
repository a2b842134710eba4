"""Decomposition-based policy iteration over a set of training days.

The global Q estimate is the running mean of per-day Q tables: the
initializer averages each day's optimal table, the evaluation step
averages each day's fixed-policy table, and improvement takes the
deterministic argmin per state. Iteration stops when the policy table
stops changing.

The global table is sparse by realization: it is keyed by
(tau, delta key) and holds a dense (soc, peak, action) value block plus
a visit count per key, since every day that matches a key contributes
its full slice. The agent state-space variants are key projections on
the same machinery: s1 drops delta entirely, s2 keeps only the sign of
the production surplus, s3 and s4 keep the delta index. The peak
coordinate follows the cost model (energy-only costs collapse it), so
a peak-pricing run must use the s4 variant.
"""

from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import controllers
from .battery import BatteryParams
from .data import DayTrace
from .day_dp import QDay, evaluate_day_policy, rollout, solve_day_optimal, tie_argmin
from .grid import (
    CostModel,
    DiscreteState,
    StateGrid,
    nearest_feasible_action,
    transition_table,
)
from .tariff import TariffSchedule


class EmptyTrainingSet(ValueError):
    pass


class PolicyUndefined(LookupError):
    """State missing from the policy table and no fallback configured."""


VARIANTS = ("s1", "s2", "s3", "s4")


def delta_key(variant: str, delta_idx: int, grid: StateGrid) -> int:
    """Project the delta index per the state-space variant."""
    if variant == "s1":
        return 0
    if variant == "s2":
        v = grid.delta.value(delta_idx)
        # production-surplus flag: +1 surplus, -1 deficit, 0 balanced
        return 1 if v < 0 else (-1 if v > 0 else 0)
    return int(delta_idx)


@dataclass
class _Block:
    values: np.ndarray  # (S, P_eff, A), +inf where infeasible
    visits: int


@dataclass
class SparseQ:
    """Visit-counted global Q table keyed by (tau, delta key)."""

    variant: str
    uses_peak: bool
    peak_rate: float
    shape: tuple[int, int, int]  # (S, P_eff, A)
    blocks: dict[tuple[int, int], _Block] = field(default_factory=dict)
    # rollout() duck-types argmin_action(state); bind_grid remembers the grid
    _grid_hint: StateGrid | None = None

    def fold_day(self, qday: QDay, grid: StateGrid) -> None:
        """Fold one day's table into the running mean, one key per step."""
        for t in range(qday.horizon):
            key = (t, delta_key(self.variant, int(qday.day_delta_idx[t]), grid))
            q_slice = qday.values[t]
            block = self.blocks.get(key)
            if block is None:
                self.blocks[key] = _Block(q_slice.copy(), 1)
                continue
            block.visits += 1
            v = block.values
            mask = np.isfinite(q_slice)
            v[mask] += (q_slice[mask] - v[mask]) / block.visits

    def action_values(self, state: DiscreteState, grid: StateGrid) -> np.ndarray | None:
        """Per-action values stored for this state, or None if unseen."""
        block = self.blocks.get((state.tau, delta_key(self.variant, state.delta_idx, grid)))
        if block is None:
            return None
        p = state.p_idx if self.uses_peak else 0
        return block.values[state.soc_idx, p]

    def argmin_action(self, state: DiscreteState, grid: StateGrid | None = None) -> int | None:
        grid = grid if grid is not None else self._grid_hint
        vals = self.action_values(state, grid)
        if vals is None or not np.isfinite(vals).any():
            return None
        order = _tie_order(grid)
        return int(tie_argmin(vals, order))

    def bind_grid(self, grid: StateGrid) -> "SparseQ":
        self._grid_hint = grid
        return self

    def n_entries(self) -> int:
        s, p, a = self.shape
        return len(self.blocks) * s * p * a

    def sorted_items(self):
        return sorted(self.blocks.items())


def _tie_order(grid: StateGrid) -> np.ndarray:
    return grid.action_tie_order()


@dataclass
class Policy:
    """Greedy policy table with a fallback controller for unseen states."""

    variant: str
    uses_peak: bool
    blocks: dict[tuple[int, int], np.ndarray]  # (S, P_eff) action indices
    fallback: str | None = "lazy"  # "lazy" | "heuristic" | None

    def table_equal(self, other: "Policy") -> bool:
        if self.blocks.keys() != other.blocks.keys():
            return False
        return all(np.array_equal(self.blocks[k], other.blocks[k]) for k in self.blocks)

    def diff_count(self, other: "Policy") -> int:
        """Number of table cells whose action changed (missing blocks
        count whole)."""
        keys = self.blocks.keys() | other.blocks.keys()
        n = 0
        for k in keys:
            a, b = self.blocks.get(k), other.blocks.get(k)
            if a is None or b is None:
                n += int(np.prod((a if a is not None else b).shape))
            else:
                n += int(np.sum(a != b))
        return n

    def action_index(
        self,
        state: DiscreteState,
        day: DayTrace,
        grid: StateGrid,
        battery: BatteryParams,
        tariff: TariffSchedule,
    ) -> int:
        block = self.blocks.get((state.tau, delta_key(self.variant, state.delta_idx, grid)))
        if block is not None:
            p = state.p_idx if self.uses_peak and block.shape[1] > 1 else 0
            return int(block[state.soc_idx, p])
        return self._fallback_index(state.tau, state.soc_idx, state.p_idx, day, grid, battery, tariff)

    def _fallback_index(self, tau, soc_idx, p_idx, day, grid, battery, tariff) -> int:
        if self.fallback is None:
            raise PolicyUndefined(f"no action stored at tau={tau} and no fallback")
        if self.fallback == "lazy":
            return grid.zero_action_idx
        ctx = controllers.make_context(
            tau, grid.soc.value(soc_idx), grid.peak.value(p_idx), day, tariff, battery, grid
        )
        kw = controllers.heuristic(ctx, battery)
        return nearest_feasible_action(kw, soc_idx, grid, battery)

    def actions_for_layer(
        self,
        tau: int,
        day: DayTrace,
        grid: StateGrid,
        battery: BatteryParams,
        tariff: TariffSchedule,
        p_axis: int,
    ) -> np.ndarray:
        """(S, p_axis) action indices at step tau, fallback resolved.

        Used by the day solver; the heuristic fallback ignores the peak
        so missing blocks broadcast one action per SOC row.
        """
        dkey = delta_key(self.variant, int(grid.delta.snap(float(day.delta[tau]))), grid)
        block = self.blocks.get((tau, dkey))
        if block is not None:
            if block.shape[1] == p_axis:
                return block
            if block.shape[1] == 1:
                return np.broadcast_to(block, (block.shape[0], p_axis))
            return block[:, :1] if p_axis == 1 else block
        if self.fallback is None:
            raise PolicyUndefined(f"no actions stored at tau={tau} and no fallback")
        col = np.empty((grid.soc.n, 1), dtype=np.int64)
        for s in range(grid.soc.n):
            col[s, 0] = self._fallback_index(tau, s, 0, day, grid, battery, tariff)
        return np.broadcast_to(col, (grid.soc.n, p_axis))


def improve(q: SparseQ, grid: StateGrid, fallback: str | None = "lazy") -> Policy:
    """Deterministic argmin policy: per state, the least-value stored
    action, ties to the smaller |a| then the smaller a."""
    order = _tie_order(grid)
    blocks = {key: tie_argmin(block.values, order) for key, block in q.sorted_items()}
    return Policy(q.variant, q.uses_peak, blocks, fallback)


def _ordered_map(fn, items, jobs: int):
    """Map preserving order with at most `jobs` tasks in flight."""
    if jobs <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending = deque()
        it = iter(items)
        for item in it:
            pending.append(pool.submit(fn, item))
            if len(pending) >= jobs:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def _new_sparse(grid: StateGrid, cost: CostModel, variant: str) -> SparseQ:
    p_eff = grid.peak.n if cost.uses_peak else 1
    q = SparseQ(variant, cost.uses_peak, cost.peak_rate, (grid.soc.n, p_eff, grid.action.n))
    return q.bind_grid(grid)


def init_qbar(
    days,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
    variant: str = "s4",
    jobs: int = 1,
) -> SparseQ:
    """Running mean of per-day optimal Q tables, folded in day order."""
    if not days:
        raise EmptyTrainingSet("need at least one training day")
    q = _new_sparse(grid, cost, variant)
    for qday in _ordered_map(
        lambda d: solve_day_optimal(d, grid, battery, tariff, cost), days, jobs
    ):
        q.fold_day(qday, grid)
    return q


def evaluate_policy(
    days,
    policy: Policy,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
    jobs: int = 1,
) -> SparseQ:
    """Running mean of per-day fixed-policy Q tables (same fold as
    init_qbar, ascending day order for bit-reproducibility)."""
    if not days:
        raise EmptyTrainingSet("need at least one training day")
    q = _new_sparse(grid, cost, policy.variant)
    for qday in _ordered_map(
        lambda d: evaluate_day_policy(d, policy, grid, battery, tariff, cost), days, jobs
    ):
        q.fold_day(qday, grid)
    return q


def average_training_return(
    days,
    policy: Policy,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
) -> float:
    """Mean rollout cost over days from (tau=0, empty battery, zero peak)."""
    total = 0.0
    for day in days:
        start = DiscreteState(0, grid.soc.snap(0.0), int(grid.delta.snap(float(day.delta[0]))), 0)
        total += rollout(day, grid, battery, tariff, cost, policy, start).total_cost
    return total / len(days)


@dataclass(frozen=True)
class TrainReport:
    iterations: int
    avg_returns: tuple[float, ...]   # one entry per distinct policy
    policy_changes: tuple[int, ...]  # cells changed per iteration
    wall_clock_s: float


def train(
    days,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
    variant: str = "s4",
    fallback: str | None = "lazy",
    max_iters: int = 20,
    jobs: int = 1,
) -> tuple[SparseQ, Policy, TrainReport]:
    """Full training loop: initialize from per-day optima, then iterate
    evaluation and improvement until the policy table is unchanged."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not days:
        raise EmptyTrainingSet("need at least one training day")
    t0 = time.perf_counter()

    q = init_qbar(days, grid, battery, tariff, cost, variant, jobs)
    policy = improve(q, grid, fallback)
    returns = [average_training_return(days, policy, grid, battery, tariff, cost)]
    changes: list[int] = []

    for _ in range(max_iters):
        q = evaluate_policy(days, policy, grid, battery, tariff, cost, jobs)
        new_policy = improve(q, grid, fallback)
        n_changed = policy.diff_count(new_policy)
        changes.append(n_changed)
        if n_changed == 0:
            break
        policy = new_policy
        returns.append(average_training_return(days, policy, grid, battery, tariff, cost))

    report = TrainReport(
        iterations=len(changes),
        avg_returns=tuple(returns),
        policy_changes=tuple(changes),
        wall_clock_s=time.perf_counter() - t0,
    )
    return q, policy, report


def online_action(
    q: SparseQ,
    state: DiscreteState,
    fallback,
    ctx: controllers.ControllerContext,
    grid: StateGrid,
    battery: BatteryParams,
) -> float:
    """Action [kW] for online control: the stored argmin when the state
    was visited, otherwise the fallback controller's action snapped to
    the nearest feasible grid action."""
    a_idx = q.argmin_action(state, grid)
    if a_idx is not None:
        return float(grid.action.value(a_idx))
    kw = fallback(ctx, battery)
    return float(grid.action.value(nearest_feasible_action(kw, state.soc_idx, grid, battery)))


def qbar_backup_gap(
    q: SparseQ,
    days,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
) -> float:
    """Largest violation of the one-step backup upper bound.

    For every stored key, compares the stored value with the mean over
    matching training days of (immediate cost + min over next actions
    of the stored continuation value). Days whose continuation key is
    missing are skipped from the mean. The averaged table should stay
    at or below this backup (it is generally not a fixed point).
    """
    from .day_dp import _cost_layers, _peak_layer  # shares the solver arithmetic

    table = transition_table(grid, battery)
    xn = table.x_next_idx[:, None, :]
    feas = table.feasible[:, None, :]
    A = grid.action.n

    vmin: dict[tuple[int, int], np.ndarray] = {}
    for key, block in q.blocks.items():
        vmin[key] = block.values.min(axis=2)

    day_layers = [_cost_layers(d, grid, battery, tariff) for d in days]
    day_dkeys = [
        [delta_key(q.variant, int(grid.delta.snap(float(d.delta[t]))), grid) for t in range(grid.horizon)]
        for d in days
    ]

    worst = -np.inf
    for (t, dkey), block in q.blocks.items():
        acc = None
        n = 0
        for di, d in enumerate(days):
            if day_dkeys[di][t] != dkey:
                continue
            _, bought, c1 = day_layers[di]
            if t + 1 < grid.horizon:
                nxt_key = (t + 1, day_dkeys[di][t + 1])
                if nxt_key not in vmin:
                    continue  # skipped from the mean
                v_next = vmin[nxt_key]
            else:
                v_next = np.zeros((grid.soc.n, block.values.shape[1]))
            if cost.uses_peak:
                p_next, p_cost = _peak_layer(bought[t], grid, cost.peak_rate)
                cont = v_next[xn, p_next[None, :, :]]
                backup = (c1[t][None, None, :] + p_cost[None, :, :]) + cont
            else:
                cont = v_next[xn, np.zeros((1, 1, A), dtype=np.int64)]
                backup = c1[t][None, None, :] + cont
            acc = backup if acc is None else acc + backup
            n += 1
        if acc is None or n == 0:
            continue
        backup_mean = acc / n
        finite = np.isfinite(block.values)
        gap = np.max(block.values[finite] - backup_mean[finite])
        worst = max(worst, float(gap))
    return worst
