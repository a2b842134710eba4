"""Battery dispatch optimization for electricity bills with demand charges.

Library layout:

- `battery` -- nonlinear equivalent-circuit battery model
- `tariff` -- meter balance, TOU energy costs, demand charges, bills
- `grid` -- discretized state/action lattice and the one-step environment
- `day_dp` -- exact backward induction over one known day
- `trainer` -- decomposition-based policy iteration on a set of days
- `controllers` -- lazy/heuristic baselines and end-of-day recoupling
- `data` -- CSV traces, synthetic day generation, dataset splits
- `experiment` -- test-set evaluation and report CSVs
- `cli` -- the `battbill` command (generate/train/evaluate/report)
"""

from .battery import (
    BatteryParams,
    Curve,
    action_bounds,
    battery_current,
    default_battery,
    is_feasible,
    soc_derivative,
    step_soc,
)
from .data import DayTrace, Dataset, data_bounds, load_csv, save_csv, split_dataset, synth_days
from .day_dp import QDay, evaluate_day_policy, rollout, solve_day_optimal
from .grid import (
    CostModel,
    DiscreteState,
    GridAxis,
    ResetBoundary,
    ResetMode,
    StateGrid,
    StepOutcome,
    allowed_actions,
    reset_peak,
    snap,
    step_env,
)
from .tariff import (
    BillBreakdown,
    BillingMode,
    TariffSchedule,
    bill,
    build_tou_schedule,
    day_energy_charge,
    demand_charge,
    p_meter,
    step_energy_cost,
)
from .trainer import (
    Policy,
    SparseQ,
    TrainReport,
    evaluate_policy,
    improve,
    init_qbar,
    online_action,
    train,
)

__version__ = "0.1.0"
