"""Nonlinear equivalent-circuit battery model.

The battery is described by SOC-dependent curves (open-circuit voltage,
internal charging/discharging resistances, maximal charging/discharging
powers), a nominal charge capacity in ampere-seconds and a discharge
efficiency. Charging and discharging power at the meter side map to a
battery current through the equivalent circuit, and the state of charge
integrates that current.

Sign convention: action `a` is in kW, positive = charging, negative =
discharging. SOC `x` is dimensionless in [0, 1]. Time is in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class InvalidSoc(ValueError):
    """SOC outside [0, 1]."""


class DischargeDomainError(ValueError):
    """Demanded discharge power exceeds what the circuit can deliver."""


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear curve over SOC, clamped outside the knot range.

    Knots are (soc, value) pairs with strictly increasing soc coordinates.
    """

    knots: tuple[tuple[float, float], ...]
    _x: np.ndarray = field(init=False, repr=False, compare=False)
    _y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.knots) < 2:
            raise ValueError("curve needs at least 2 knots")
        x = np.asarray([k[0] for k in self.knots], dtype=float)
        y = np.asarray([k[1] for k in self.knots], dtype=float)
        if not (np.all(np.diff(x) > 0) and np.all(np.isfinite(x))):
            raise ValueError("knot x-coordinates must be finite and strictly increasing")
        if not np.all(np.isfinite(y)):
            raise ValueError("knot values must be finite")
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_y", y)

    def __call__(self, x):
        """Evaluate at scalar or array `x`; np.interp clamps outside the range."""
        return np.interp(x, self._x, self._y)

    def mean_value(self) -> float:
        """Integral mean of the curve over its knot span (trapezoid rule)."""
        span = self._x[-1] - self._x[0]
        return float(np.trapezoid(self._y, self._x) / span)

    def min_value(self) -> float:
        return float(self._y.min())

    @classmethod
    def constant(cls, value: float, lo: float = 0.0, hi: float = 1.0) -> "Curve":
        return cls(((lo, value), (hi, value)))


@dataclass(frozen=True)
class BatteryParams:
    """Electrical parameters of the battery.

    u_ocv [V], r_charge/r_discharge [Ohm] and the power limits [kW] are
    curves over SOC. q_nominal is the nominal charge capacity [A*s],
    rho_d the discharge efficiency in (0, 1], capacity_kwh the energy
    capacity used for reporting.
    """

    u_ocv: Curve
    r_charge: Curve
    r_discharge: Curve
    p_charge_max: Curve
    p_discharge_max: Curve
    q_nominal: float
    rho_d: float
    capacity_kwh: float

    def __post_init__(self):
        if self.q_nominal <= 0:
            raise ValueError("q_nominal must be > 0")
        if not (0.0 < self.rho_d <= 1.0):
            raise ValueError("rho_d must be in (0, 1]")
        for name in ("r_charge", "r_discharge"):
            if getattr(self, name).min_value() <= 0:
                raise ValueError(f"{name} values must be > 0")
        for name in ("p_charge_max", "p_discharge_max"):
            if getattr(self, name).min_value() < 0:
                raise ValueError(f"{name} values must be >= 0")


def default_battery(
    capacity_kwh: float = 27.3,
    rho_d: float = 0.95,
    u_ocv: Curve | None = None,
    r_charge: Curve | None = None,
    r_discharge: Curve | None = None,
    p_charge_max: Curve | None = None,
    p_discharge_max: Curve | None = None,
    q_nominal: float | None = None,
) -> BatteryParams:
    """Documented synthetic defaults for a 27.3 kWh pack.

    U_ocv rises linearly 340 -> 400 V, both internal resistances
    0.08 -> 0.12 Ohm, power limits flat at 20 kW. q_nominal defaults to
    capacity / mean(U_ocv) converted to ampere-seconds (~265,621 A*s).
    """
    u_ocv = u_ocv or Curve(((0.0, 340.0), (1.0, 400.0)))
    r_charge = r_charge or Curve(((0.0, 0.08), (1.0, 0.12)))
    r_discharge = r_discharge or Curve(((0.0, 0.08), (1.0, 0.12)))
    p_charge_max = p_charge_max or Curve.constant(20.0)
    p_discharge_max = p_discharge_max or Curve.constant(20.0)
    if q_nominal is None:
        q_nominal = capacity_kwh * 3.6e6 / u_ocv.mean_value()
    return BatteryParams(
        u_ocv=u_ocv,
        r_charge=r_charge,
        r_discharge=r_discharge,
        p_charge_max=p_charge_max,
        p_discharge_max=p_discharge_max,
        q_nominal=q_nominal,
        rho_d=rho_d,
        capacity_kwh=capacity_kwh,
    )


def battery_current(params: BatteryParams, x: float, a: float) -> float:
    """Battery current [A] for action `a` [kW] at SOC `x`.

    Charging (a > 0) solves U*I + R_c*I^2 = P for the positive root;
    discharging (a < 0) solves U*I - R_d*I^2 = -P_d for the negative root.
    Powers are converted to W internally so units match volts and ohms.

    Raises:
        InvalidSoc: x outside [0, 1].
        DischargeDomainError: discharge power beyond the circuit limit
            (negative square-root argument).
    """
    if not (0.0 <= x <= 1.0):
        raise InvalidSoc(f"SOC {x} outside [0, 1]")
    if a == 0.0:
        return 0.0
    u = float(params.u_ocv(x))
    if a > 0.0:
        r = float(params.r_charge(x))
        p_w = a * 1000.0
        return (-u + math.sqrt(u * u + 4.0 * r * p_w)) / (2.0 * r)
    r = float(params.r_discharge(x))
    p_w = -a * 1000.0
    disc = u * u - 4.0 * r * p_w
    if disc < 0.0:
        raise DischargeDomainError(
            f"discharge power {-a} kW exceeds circuit limit at SOC {x}"
        )
    return (-u + math.sqrt(disc)) / (2.0 * r)


def soc_derivative(params: BatteryParams, x: float, a: float) -> float:
    """SOC rate of change [1/s]: battery current over nominal charge."""
    return battery_current(params, x, a) / params.q_nominal


# Target sub-step length for the explicit Euler integrator. At the
# canonical dt = 600 s this yields the 60 fixed sub-steps of 10 s.
_SUBSTEP_SECONDS = 10.0


def _n_substeps(dt: float) -> int:
    return max(1, int(round(dt / _SUBSTEP_SECONDS)))


class SocStep(NamedTuple):
    soc: float
    saturated: bool


def step_soc(params: BatteryParams, x: float, a: float, dt: float) -> SocStep:
    """Integrate the SOC over `dt` seconds at constant action `a` [kW].

    Explicit Euler with ~10 s sub-steps (60 sub-steps at dt = 600 s).
    The result is clamped to [0, 1]; `saturated` reports whether the
    clamp engaged at any sub-step. Splitting dt into halves composes to
    the identical sub-step chain, so integration is split-consistent.
    """
    if not (0.0 <= x <= 1.0):
        raise InvalidSoc(f"SOC {x} outside [0, 1]")
    n = _n_substeps(dt)
    h = dt / n
    saturated = False
    for _ in range(n):
        x_new = x + h * soc_derivative(params, x, a)
        if x_new < 0.0:
            x_new = 0.0
            saturated = True
        elif x_new > 1.0:
            x_new = 1.0
            saturated = True
        x = x_new
    return SocStep(x, saturated)


def action_bounds(
    params: BatteryParams, soc_values: Sequence[float] | np.ndarray | None = None
) -> tuple[float, float]:
    """Global action bounds (a_min, a_max) [kW].

    a_max is the minimum of the charging power limit over the SOC grid
    (curve knots plus any provided grid points), a_min minus the same
    for the discharging limit, so the action space no longer depends on
    the state of charge.
    """
    pts = list(params.p_charge_max._x)
    if soc_values is not None:
        pts.extend(float(v) for v in soc_values)
    a_max = float(min(params.p_charge_max(v) for v in pts))
    pts_d = list(params.p_discharge_max._x)
    if soc_values is not None:
        pts_d.extend(float(v) for v in soc_values)
    a_min = -float(min(params.p_discharge_max(v) for v in pts_d))
    return a_min, a_max


def is_feasible(params: BatteryParams, x: float, a: float, dt: float) -> bool:
    """Whether action `a` can run for `dt` seconds from SOC `x`.

    True iff the integration completes without a discharge-domain error
    and without engaging the SOC clamp. Errors map to False; a = 0 is
    always feasible.
    """
    try:
        return not step_soc(params, x, a, dt).saturated
    except (InvalidSoc, DischargeDomainError):
        return False
