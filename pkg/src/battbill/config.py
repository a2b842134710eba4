"""Experiment configuration: INI file plus CLI overrides.

Resolution order for every setting: CLI flag, then config file, then
the preset defaults (`desk` keeps everything small enough for seconds,
`full` matches the full-resolution setup). See the README for the full
key reference.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .battery import BatteryParams, Curve, default_battery
from .grid import CostModel, GridAxis, ResetMode, StateGrid
from .tariff import BillingMode, TariffSchedule, build_tou_schedule, parse_window


class ConfigError(ValueError):
    """Bad configuration (maps to CLI exit code 2)."""


PROBLEMS = ("dem", "ddm", "mdm")
FALLBACKS = ("lazy", "heuristic")
PRESETS = ("desk", "full")

_PRESET_DEFAULTS = {
    "desk": dict(
        n_train=10, n_test=4, bp_len=2,
        soc_step=0.05, delta_step=10.0, p_step=5.0, a_step=5.0,
    ),
    "full": dict(
        n_train=300, n_test=100, bp_len=20,
        soc_step=0.01, delta_step=2.0, p_step=1.0, a_step=1.0,
    ),
}

_KNOWN_KEYS = {
    "run": {"preset", "problem", "variant", "fallback", "recouple", "seed", "jobs", "max_iters"},
    "paths": {"data_dir", "artifacts_dir", "reports_dir"},
    "data": {"n_train", "n_test", "bp_len", "horizon", "dt_seconds"},
    "grid": {
        "soc_step", "delta_min", "delta_max", "delta_step",
        "p_max", "p_step", "a_min", "a_max", "a_step",
    },
    "tariff": {"on_peak", "pp_on", "pp_off", "sp", "mu_daily", "mu_monthly", "fees"},
    "battery": {
        "capacity_kwh", "rho_d", "q_nominal",
        "u_ocv", "r_charge", "r_discharge", "p_charge_max", "p_discharge_max",
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    problem: str
    variant: str
    fallback: str
    recouple: bool
    seed: int
    jobs: int
    max_iters: int
    data_dir: Path
    artifacts_dir: Path
    reports_dir: Path
    n_train: int
    n_test: int
    bp_len: int
    grid: StateGrid
    tariff: TariffSchedule
    battery: BatteryParams

    def cost_model(self) -> CostModel:
        if self.problem == "dem":
            return CostModel.energy_only()
        if self.problem == "ddm":
            return CostModel.peak_increment(self.tariff.mu_daily)
        return CostModel.peak_increment(self.tariff.mu_monthly)

    def billing_mode(self) -> BillingMode:
        return {
            "dem": BillingMode.ENERGY_ONLY,
            "ddm": BillingMode.DAILY,
            "mdm": BillingMode.MONTHLY,
        }[self.problem]

    def reset_mode(self) -> ResetMode:
        return ResetMode.MONTHLY if self.problem == "mdm" else ResetMode.DAILY


def parse_curve(text: str) -> Curve:
    """Parse `x:value` knot lists, e.g. ``0:340, 1:400``."""
    knots = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            x, v = part.split(":")
            knots.append((float(x), float(v)))
        except ValueError as exc:
            raise ConfigError(f"bad curve knot {part!r}, expected x:value") from exc
    try:
        return Curve(tuple(knots))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _read_ini(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
        out[section] = dict(parser[section])
    return out


def load_config(path=None, **cli) -> ExperimentConfig:
    """Build the experiment configuration.

    `cli` values (when not None) override the file, which overrides the
    preset defaults.

    Raises:
        ConfigError: unknown keys, bad values, or invalid combinations
            (demand-charge problems require the s4 state space).
    """
    file_cfg = _read_ini(path) if path else {}

    def pick(section: str, key: str, default=None):
        if cli.get(key) is not None:
            return cli[key]
        return file_cfg.get(section, {}).get(key, default)

    preset = str(pick("run", "preset", "desk")).lower()
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    pd = _PRESET_DEFAULTS[preset]

    problem = str(pick("run", "problem", "ddm")).lower()
    if problem not in PROBLEMS:
        raise ConfigError(f"problem must be one of {PROBLEMS}, got {problem!r}")
    variant = str(pick("run", "variant", "s4" if problem != "dem" else "s3")).lower()
    if variant not in ("s1", "s2", "s3", "s4"):
        raise ConfigError(f"variant must be s1..s4, got {variant!r}")
    if problem in ("ddm", "mdm") and variant != "s4":
        raise ConfigError(f"problem {problem} requires variant s4 (peak in the state)")
    fallback = str(pick("run", "fallback", "lazy")).lower()
    if fallback not in FALLBACKS:
        raise ConfigError(f"fallback must be one of {FALLBACKS}, got {fallback!r}")

    try:
        recouple = _as_bool(pick("run", "recouple", False))
        seed = int(pick("run", "seed", 1))
        jobs = int(pick("run", "jobs", 1))
        max_iters = int(pick("run", "max_iters", 20))
        n_train = int(pick("data", "n_train", pd["n_train"]))
        n_test = int(pick("data", "n_test", pd["n_test"]))
        bp_len = int(pick("data", "bp_len", pd["bp_len"]))
        horizon = int(pick("data", "horizon", 144))
        dt_seconds = float(pick("data", "dt_seconds", 600.0))

        soc_step = float(pick("grid", "soc_step", pd["soc_step"]))
        delta_min = float(pick("grid", "delta_min", -60.0))
        delta_max = float(pick("grid", "delta_max", 60.0))
        delta_step = float(pick("grid", "delta_step", pd["delta_step"]))
        p_max = float(pick("grid", "p_max", 100.0))
        p_step = float(pick("grid", "p_step", pd["p_step"]))
        a_min = float(pick("grid", "a_min", -20.0))
        a_max = float(pick("grid", "a_max", 20.0))
        a_step = float(pick("grid", "a_step", pd["a_step"]))

        pp_on = float(pick("tariff", "pp_on", 0.1936))
        pp_off = float(pick("tariff", "pp_off", 0.1330))
        sp = float(pick("tariff", "sp", 0.098))
        mu_daily = float(pick("tariff", "mu_daily", 0.5))
        mu_monthly = float(pick("tariff", "mu_monthly", 10.0))
        fees = float(pick("tariff", "fees", 0.0))

        capacity_kwh = float(pick("battery", "capacity_kwh", 27.3))
        rho_d = float(pick("battery", "rho_d", 0.95))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric config value: {exc}") from exc

    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    if n_train < 1 or n_test < 0 or bp_len < 1:
        raise ConfigError("n_train >= 1, n_test >= 0 and bp_len >= 1 required")

    windows_text = pick("tariff", "on_peak", "06:00-09:00,18:00-21:00")
    try:
        windows = tuple(parse_window(w) for w in str(windows_text).split(",") if w.strip())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        grid = StateGrid(
            horizon=horizon,
            dt_seconds=dt_seconds,
            soc=GridAxis.from_range(0.0, 1.0, soc_step),
            delta=GridAxis.from_range(delta_min, delta_max, delta_step),
            peak=GridAxis.from_range(0.0, p_max, p_step),
            action=GridAxis.from_range(a_min, a_max, a_step),
        )
        tariff = build_tou_schedule(
            horizon=horizon,
            dt_hours=dt_seconds / 3600.0,
            on_peak_windows=windows,
            pp_on=pp_on,
            pp_off=pp_off,
            sp=sp,
            mu_daily=mu_daily,
            mu_monthly=mu_monthly,
            fees=fees,
        )

        def curve_or_none(key: str) -> Curve | None:
            text = pick("battery", key)
            return parse_curve(str(text)) if text is not None else None

        q_nominal = pick("battery", "q_nominal")
        battery = default_battery(
            capacity_kwh=capacity_kwh,
            rho_d=rho_d,
            u_ocv=curve_or_none("u_ocv"),
            r_charge=curve_or_none("r_charge"),
            r_discharge=curve_or_none("r_discharge"),
            p_charge_max=curve_or_none("p_charge_max"),
            p_discharge_max=curve_or_none("p_discharge_max"),
            q_nominal=float(q_nominal) if q_nominal is not None else None,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        preset=preset,
        problem=problem,
        variant=variant,
        fallback=fallback,
        recouple=recouple,
        seed=seed,
        jobs=jobs,
        max_iters=max_iters,
        data_dir=Path(pick("paths", "data_dir", "data")),
        artifacts_dir=Path(pick("paths", "artifacts_dir", "artifacts")),
        reports_dir=Path(pick("paths", "reports_dir", "reports")),
        n_train=n_train,
        n_test=n_test,
        bp_len=bp_len,
        grid=grid,
        tariff=tariff,
        battery=battery,
    )


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")
