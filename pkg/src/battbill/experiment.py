"""Evaluation of trained agents and baselines on test days.

Days are simulated forward on the tabular environment with the exact
meter traces priced by the billing primitives. The recorded-peak state
resets per day for daily demand charges and only at billing-period
starts for monthly ones; recoupling mode additionally carries the SOC
across days. Reductions are always against the no-battery meter trace
(consumption minus production).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import controllers
from .battery import BatteryParams
from .data import BillingPeriod, DayTrace, group_billing_periods
from .day_dp import rollout
from .grid import CostModel, DiscreteState, StateGrid, nearest_feasible_action
from .tariff import TariffSchedule, day_energy_charge, demand_charge, trace_peak
from .trainer import SparseQ, online_action

AGENT_KINDS = ("trained", "lazy", "heuristic")

_FALLBACK_FNS = {"lazy": controllers.lazy, "heuristic": controllers.heuristic}


def make_chooser(
    agent: str,
    day: DayTrace,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    q: SparseQ | None = None,
    fallback: str = "lazy",
    recouple: bool = False,
):
    """Per-day action chooser (state -> action index) for a rollout."""
    if agent == "trained" and q is None:
        raise ValueError("trained agent needs a Q table")
    fallback_fn = _FALLBACK_FNS[fallback]

    def choose(state: DiscreteState) -> int:
        ctx = controllers.make_context(
            state.tau,
            grid.soc.value(state.soc_idx),
            grid.peak.value(state.p_idx),
            day,
            tariff,
            battery,
            grid,
        )
        if agent == "trained":
            kw = online_action(q, state, fallback_fn, ctx, grid, battery)
            a_idx = grid.action.snap(kw)
        elif agent == "lazy":
            a_idx = grid.zero_action_idx
        else:
            kw = controllers.heuristic(ctx, battery)
            a_idx = nearest_feasible_action(kw, state.soc_idx, grid, battery)
        if recouple and ctx.past_last_on_peak:
            # recouple returns a grid action, so the snap is exact
            kw = controllers.recouple(grid.action.value(a_idx), ctx, battery, grid)
            a_idx = grid.action.snap(kw)
        return a_idx

    return choose


@dataclass(frozen=True)
class DayRow:
    day_id: str
    day_index: int
    month_index: int
    nobat_energy: float
    nobat_demand: float
    nobat_bill: float
    agent_energy: float
    agent_demand: float
    agent_bill: float
    reduction_energy: float
    reduction_demand: float
    reduction_total: float


@dataclass(frozen=True)
class BpRow:
    bp_index: int
    n_days: int
    short: bool
    nobat_energy: float
    nobat_demand: float
    agent_energy: float
    agent_demand: float


@dataclass(frozen=True)
class EvaluationReport:
    problem: str
    variant: str
    agent: str
    fallback: str
    recouple: bool
    rows: tuple[DayRow, ...]
    bp_rows: tuple[BpRow, ...]
    hist_edges: np.ndarray
    hist_nobat: np.ndarray
    hist_agent: np.ndarray

    @property
    def label(self) -> str:
        tag = f"{self.problem}_{self.variant}_{self.agent}"
        return f"{tag}_recoupled" if self.recouple else tag

    def averages(self) -> dict[str, float]:
        n = len(self.rows)
        return {
            "n_days": n,
            "avg_no_battery_bill": sum(r.nobat_bill for r in self.rows) / n,
            "avg_agent_bill": sum(r.agent_bill for r in self.rows) / n,
            "avg_reduction_energy": sum(r.reduction_energy for r in self.rows) / n,
            "avg_reduction_demand": sum(r.reduction_demand for r in self.rows) / n,
            "avg_reduction_total": sum(r.reduction_total for r in self.rows) / n,
        }


def evaluate(
    test_days,
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    problem: str,
    agent: str = "trained",
    q: SparseQ | None = None,
    variant: str = "s4",
    fallback: str = "lazy",
    recouple: bool = False,
    bp_len: int = 20,
) -> EvaluationReport:
    """Simulate all test days and price them against the no-battery case.

    For `mdm` the recorded peak carries across the days of one billing
    period and the single period demand charge is split equally over
    its days; `dem`/`ddm` settle each day on its own.
    """
    if not test_days:
        raise ValueError("no test days")
    cost = _cost_for(problem, tariff)
    periods = group_billing_periods(list(test_days), bp_len)

    agent_meters: list[np.ndarray] = []
    day_index = 0
    rows_raw = []  # (day, bp_index, meter)
    for period in periods:
        p_idx = 0
        soc_idx = grid.soc.snap(0.0)
        for day in period.days:
            chooser = make_chooser(
                agent, day, grid, battery, tariff, q=q, fallback=fallback, recouple=recouple
            )
            start = DiscreteState(
                0, soc_idx, int(grid.delta.snap(float(day.delta[0]))), p_idx
            )
            result = rollout(day, grid, battery, tariff, cost, chooser, start)
            agent_meters.append(result.meter)
            rows_raw.append((day, period.index, result.meter))
            day_index += 1
            if problem == "mdm":
                p_idx = result.final_state.p_idx
            soc_idx = result.final_state.soc_idx if recouple else grid.soc.snap(0.0)

    rows, bp_rows = _price_rows(rows_raw, periods, tariff, problem)
    nobat = np.concatenate([d.delta for d in test_days])
    mine = np.concatenate(agent_meters)
    top = max(float(np.maximum(nobat, 0.0).max()), float(np.maximum(mine, 0.0).max()))
    edges = np.arange(0.0, math.floor(top) + 2.0)  # 1 kW bins
    hist_nobat, _ = np.histogram(np.maximum(nobat, 0.0), bins=edges)
    hist_agent, _ = np.histogram(np.maximum(mine, 0.0), bins=edges)

    return EvaluationReport(
        problem=problem,
        variant=variant,
        agent=agent,
        fallback=fallback,
        recouple=recouple,
        rows=tuple(rows),
        bp_rows=tuple(bp_rows),
        hist_edges=edges,
        hist_nobat=hist_nobat,
        hist_agent=hist_agent,
    )


def _cost_for(problem: str, tariff: TariffSchedule) -> CostModel:
    if problem == "dem":
        return CostModel.energy_only()
    if problem == "ddm":
        return CostModel.peak_increment(tariff.mu_daily)
    if problem == "mdm":
        return CostModel.peak_increment(tariff.mu_monthly)
    raise ValueError(f"unknown problem {problem!r}")


def _price_rows(rows_raw, periods, tariff: TariffSchedule, problem: str):
    rows = []
    bp_rows = []
    by_period: dict[int, list] = {}
    for day, bp_index, meter in rows_raw:
        by_period.setdefault(bp_index, []).append((day, meter))

    day_index = 0
    for period in periods:
        entries = by_period[period.index]
        nobat_bp_peak = max(trace_peak(d.delta) for d, _ in entries)
        agent_bp_peak = max(trace_peak(m) for _, m in entries)
        nobat_bp_demand = demand_charge(nobat_bp_peak, tariff.mu_monthly)
        agent_bp_demand = demand_charge(agent_bp_peak, tariff.mu_monthly)

        nobat_energy_bp = 0.0
        agent_energy_bp = 0.0
        for day, meter in entries:
            nobat_energy = day_energy_charge(day.delta, tariff)
            agent_energy = day_energy_charge(meter, tariff)
            nobat_energy_bp += nobat_energy
            agent_energy_bp += agent_energy
            if problem == "dem":
                nobat_demand = agent_demand = 0.0
            elif problem == "ddm":
                nobat_demand = demand_charge(trace_peak(day.delta), tariff.mu_daily)
                agent_demand = demand_charge(trace_peak(meter), tariff.mu_daily)
            else:  # mdm: period demand split equally over its days
                nobat_demand = nobat_bp_demand / len(entries)
                agent_demand = agent_bp_demand / len(entries)
            nobat_bill = tariff.fees + nobat_energy + nobat_demand
            agent_bill = tariff.fees + agent_energy + agent_demand
            rows.append(
                DayRow(
                    day_id=day.day_id,
                    day_index=day_index,
                    month_index=period.index,
                    nobat_energy=nobat_energy,
                    nobat_demand=nobat_demand,
                    nobat_bill=nobat_bill,
                    agent_energy=agent_energy,
                    agent_demand=agent_demand,
                    agent_bill=agent_bill,
                    reduction_energy=nobat_energy - agent_energy,
                    reduction_demand=nobat_demand - agent_demand,
                    reduction_total=nobat_bill - agent_bill,
                )
            )
            day_index += 1
        if problem == "mdm":
            bp_rows.append(
                BpRow(
                    bp_index=period.index,
                    n_days=len(entries),
                    short=period.short,
                    nobat_energy=nobat_energy_bp,
                    nobat_demand=nobat_bp_demand,
                    agent_energy=agent_energy_bp,
                    agent_demand=agent_bp_demand,
                )
            )
    return rows, bp_rows


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_per_day_csv(report: EvaluationReport, path) -> None:
    cols = [
        "day_id", "day_index", "month_index",
        "no_battery_energy", "no_battery_demand", "no_battery_bill",
        "agent_energy", "agent_demand", "agent_bill",
        "reduction_energy", "reduction_demand", "reduction_total",
    ]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.rows:
            w.writerow(
                [
                    r.day_id, r.day_index, r.month_index,
                    _fmt(r.nobat_energy), _fmt(r.nobat_demand), _fmt(r.nobat_bill),
                    _fmt(r.agent_energy), _fmt(r.agent_demand), _fmt(r.agent_bill),
                    _fmt(r.reduction_energy), _fmt(r.reduction_demand), _fmt(r.reduction_total),
                ]
            )


SUMMARY_COLS = [
    "label", "problem", "variant", "agent", "fallback", "recouple",
    "n_days", "avg_no_battery_bill", "avg_agent_bill",
    "avg_reduction_energy", "avg_reduction_demand", "avg_reduction_total",
]


def write_summary_csv(report: EvaluationReport, path) -> None:
    avg = report.averages()
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLS)
        w.writerow(
            [
                report.label, report.problem, report.variant, report.agent,
                report.fallback, _fmt(report.recouple),
                avg["n_days"], _fmt(avg["avg_no_battery_bill"]), _fmt(avg["avg_agent_bill"]),
                _fmt(avg["avg_reduction_energy"]), _fmt(avg["avg_reduction_demand"]),
                _fmt(avg["avg_reduction_total"]),
            ]
        )


def write_histogram_csv(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left_kw", "bin_right_kw", "no_battery_count", "agent_count"])
        for i in range(len(report.hist_nobat)):
            w.writerow(
                [
                    _fmt(float(report.hist_edges[i])),
                    _fmt(float(report.hist_edges[i + 1])),
                    int(report.hist_nobat[i]),
                    int(report.hist_agent[i]),
                ]
            )


def write_billing_periods_csv(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            [
                "bp_index", "n_days", "short",
                "no_battery_energy", "no_battery_demand",
                "agent_energy", "agent_demand",
            ]
        )
        for r in report.bp_rows:
            w.writerow(
                [
                    r.bp_index, r.n_days, _fmt(r.short),
                    _fmt(r.nobat_energy), _fmt(r.nobat_demand),
                    _fmt(r.agent_energy), _fmt(r.agent_demand),
                ]
            )


def read_summary_csv(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        row = next(reader, None)
    if row is None:
        raise ValueError(f"empty summary file {path}")
    return row


def read_histogram_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_comparison_csv(summaries: list[dict[str, str]], path) -> None:
    """Side-by-side table: one metric per row, one column per run."""
    labels = _dedupe([s["label"] for s in summaries])
    metrics = [c for c in SUMMARY_COLS if c != "label"]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + labels)
        for metric in metrics:
            w.writerow([metric] + [s.get(metric, "") for s in summaries])


def write_histogram_comparison_csv(
    labeled_histograms: list[tuple[str, list[dict[str, str]]]], path
) -> None:
    """Shared 1 kW bins with one agent-count column per run."""
    labels = _dedupe([label for label, _ in labeled_histograms])
    tables = []
    top = 0.0
    for _, rows in labeled_histograms:
        counts = {float(r["bin_left_kw"]): int(r["agent_count"]) for r in rows}
        tables.append(counts)
        if rows:
            top = max(top, max(float(r["bin_right_kw"]) for r in rows))
    edges = np.arange(0.0, top + 1.0) if top else np.array([0.0])
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left_kw", "bin_right_kw"] + [f"{lab}_count" for lab in labels])
        for left in edges[:-1] if len(edges) > 1 else []:
            row = [_fmt(float(left)), _fmt(float(left + 1.0))]
            row += [str(t.get(float(left), 0)) for t in tables]
            w.writerow(row)


def _dedupe(labels: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for lab in labels:
        if lab in seen:
            seen[lab] += 1
            out.append(f"{lab}_{seen[lab]}")
        else:
            seen[lab] = 1
            out.append(lab)
    return out
