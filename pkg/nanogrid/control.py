"""Per-step dispatch of the battery and EV chargers toward a reference,
and the real-time and predictive controllers that drive it."""
import logging
import time
from dataclasses import dataclass

import numpy as np

from nanogrid.assets import (BatteryState, battery_step, ev_max_rate, ev_min_rate, ev_step,
                             feasible_battery_range)
from nanogrid.errors import ConfigError, ContractError, NanogridError
from nanogrid.forecast import rolling_forecasts
from nanogrid.metrics import build_result
from nanogrid.target import (horizon_step_reference, moving_average_curve, realtime_reference,
                             soc_recovery_offset, variance_curve)

logger = logging.getLogger("Nanogrid.control")

MODES = ("realtime", "predictive_ma", "predictive_var")
ORDERS = ("battery_first", "ev_first")


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "realtime"
    allocation_order: str = "battery_first"
    n: int = None
    h: int = None
    forecaster: object = None
    name: str = None
    # pull the battery back toward its initial SoC over this many minutes
    soc_recovery_minutes: float = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"controller mode must be one of {MODES}, got {self.mode!r}")
        if self.allocation_order not in ORDERS:
            raise ConfigError(f"allocation_order must be one of {ORDERS}, got {self.allocation_order!r}")
        if self.name is None:
            object.__setattr__(self, "name", self.mode)
        if self.mode == "realtime":
            if self.soc_recovery_minutes is not None:
                raise ConfigError(f"controller '{self.name}': soc_recovery_minutes applies to predictive modes only")
            return
        if self.soc_recovery_minutes is not None and not self.soc_recovery_minutes > 0:
            raise ConfigError(
                f"controller '{self.name}': soc_recovery_minutes must be > 0, got {self.soc_recovery_minutes}")
        if self.forecaster is None:
            raise ConfigError(f"controller '{self.name}' ({self.mode}) requires field 'forecaster'")
        if self.h is not None and not 1 <= self.h <= self.forecaster.horizon:
            raise ConfigError(
                f"controller '{self.name}': h={self.h} must be in [1, forecaster horizon {self.forecaster.horizon}]")
        if self.mode == "predictive_ma":
            if self.n is None:
                raise ConfigError(f"controller '{self.name}' (predictive_ma) requires field 'n'")
            if not 0 <= self.n <= self.horizon_steps():
                raise ConfigError(
                    f"controller '{self.name}': n={self.n} must be in [0, h={self.horizon_steps()}]")

    def horizon_steps(self, scenario=None):
        if self.h is not None:
            return self.h
        if self.forecaster is not None:
            return self.forecaster.horizon
        return scenario.horizon_steps if scenario is not None else 1


@dataclass(frozen=True)
class Dispatch:
    p_batt_ch_kw: float
    p_batt_dis_kw: float
    p_ev_kw: tuple
    achieved_output_kw: float
    residual_kw: float
    target_kw: float

    @property
    def ev_total_kw(self):
        return float(sum(self.p_ev_kw))


def dispatch_step(pv_kw, load_kw, p_ref_kw, battery_state, battery_spec, sessions, now_min,
                  dt_minutes, order="battery_first"):
    """Closed-form minimiser of |output - p_ref| over the box of feasible actions.

    Output is affine in one scalar adjustment x = b + sum(curtailment), so
    the optimum projects the required adjustment onto the summed interval.
    EVs default to their maximum rate; curtailment moves them toward their
    deadline floors in proportion to each session's headroom.
    """
    if not np.isfinite(p_ref_kw):
        raise ContractError(f"reference {p_ref_kw} is not finite")
    if order not in ORDERS:
        raise ContractError(f"allocation order must be one of {ORDERS}, got {order!r}")

    b_min, b_max = feasible_battery_range(battery_state, battery_spec, dt_minutes)
    ev_hi = [ev_max_rate(s, now_min, dt_minutes) for s in sessions]
    ev_lo = [min(ev_min_rate(s, now_min, dt_minutes), hi) for s, hi in zip(sessions, ev_hi)]
    headroom = [hi - lo for hi, lo in zip(ev_hi, ev_lo)]
    total_headroom = sum(headroom)

    base = pv_kw - load_kw - sum(ev_hi)
    x = min(max(p_ref_kw - base, b_min), b_max + total_headroom)
    if x <= 0:
        b, curtail = x, 0.0
    elif order == "battery_first":
        b = min(x, b_max)
        curtail = x - b
    else:
        curtail = min(x, total_headroom)
        b = x - curtail

    if total_headroom > 0:
        p_ev = tuple(min(hi, max(lo, hi - curtail * room / total_headroom))
                     for hi, lo, room in zip(ev_hi, ev_lo, headroom))
    else:
        p_ev = tuple(ev_hi)

    p_ch, p_dis = max(0.0, -b), max(0.0, b)
    achieved = pv_kw - load_kw - p_ch + p_dis - sum(p_ev)
    return Dispatch(p_ch, p_dis, p_ev, achieved, abs(achieved - p_ref_kw), p_ref_kw)


def _simulate(scenario, name, reference, order="battery_first"):
    """Step the scenario; reference(t, uncontrolled, prev_output, ev_default, soc_pct) gives p_ref."""
    started = time.perf_counter()
    pv, load = scenario.pv.values, scenario.load.values
    dt = scenario.step_minutes
    spec = scenario.battery
    n = scenario.n_steps
    sessions = list(scenario.ev_sessions)

    battery = BatteryState(scenario.battery_soc_init_pct)
    uncontrolled = np.zeros(n)
    columns = {key: np.zeros(n) for key in
               ("target_kw", "achieved_kw", "batt_soc_pct", "batt_ch_kw", "batt_dis_kw", "ev_kw", "residual_kw")}
    ev_soc = np.zeros((n, len(sessions)))

    prev_output = None
    for t in range(n):
        now = t * dt
        try:
            active = [i for i, s in enumerate(sessions) if s.is_active(now)]
            ev_default = sum(ev_max_rate(sessions[i], now, dt) for i in active)
            uncontrolled[t] = pv[t] - load[t] - ev_default
            p_ref = reference(t, uncontrolled, prev_output, ev_default, battery.soc_pct)
            dispatch = dispatch_step(pv[t], load[t], p_ref, battery, spec,
                                     [sessions[i] for i in active], now, dt, order)
            battery = battery_step(battery, spec, dispatch.p_batt_ch_kw, dispatch.p_batt_dis_kw, dt)
            for i, p_ev in zip(active, dispatch.p_ev_kw):
                sessions[i] = ev_step(sessions[i], p_ev, sessions[i].step_minutes(now, dt))
        except NanogridError as exc:
            exc.step = t
            logger.error(f"{name}: {exc}")
            raise

        columns["target_kw"][t] = p_ref
        columns["achieved_kw"][t] = dispatch.achieved_output_kw
        columns["batt_soc_pct"][t] = battery.soc_pct
        columns["batt_ch_kw"][t] = dispatch.p_batt_ch_kw
        columns["batt_dis_kw"][t] = dispatch.p_batt_dis_kw
        columns["ev_kw"][t] = dispatch.ev_total_kw
        columns["residual_kw"][t] = dispatch.residual_kw
        ev_soc[t] = [s.soc_pct for s in sessions]
        prev_output = dispatch.achieved_output_kw

    result = build_result(name, scenario, scenario.raw_net, uncontrolled, columns, ev_soc, sessions,
                          time.perf_counter() - started)
    logger.info(f"{name}: total violation {result.summary.total_violation_kw:.3f} kW over "
                f"{result.summary.violation_count} steps, final SoC {result.summary.final_batt_soc_pct:.2f}%")
    return result


def run_realtime(scenario, config=None, prev_output_kw=None):
    config = config or ControllerConfig()
    limit = scenario.ramp_limit_kw_per_step

    def reference(t, uncontrolled, prev_output, ev_default, soc_pct):
        if t == 0 and prev_output_kw is not None:
            prev_output = prev_output_kw
        return realtime_reference(prev_output, uncontrolled[t], limit)

    return _simulate(scenario, config.name, reference, config.allocation_order)


def run_predictive(scenario, config, prev_output_kw=None):
    """Track a forecast-driven curve, re-clamped against the achieved output.

    The moving-average curve is itself ramp-limited against its own previous
    value, so after an unforeseen drop it descends from the pre-drop level
    at the limit rather than from wherever the assets saturated.
    """
    if config.mode not in ("predictive_ma", "predictive_var"):
        raise ConfigError(f"run_predictive needs a predictive mode, got {config.mode!r}")
    model = config.forecaster
    if not model.fitted:
        raise ConfigError(f"controller '{config.name}': forecaster is not fitted")
    limit = scenario.ramp_limit_kw_per_step
    h = config.horizon_steps(scenario)
    pv, load = scenario.pv.values, scenario.load.values
    # forecasts depend only on observed PV and load, so issue them all up front
    pv_hat, load_hat = rolling_forecasts(model, pv, load)
    pv_hat, load_hat = pv_hat[:, :h], load_hat[:, :h]
    curve_prev = prev_output_kw

    def moving_average_reference(t, uncontrolled, prev_output, ev_default):
        nonlocal curve_prev
        net_fcst = pv_hat[t] - load_hat[t] - ev_default
        history = uncontrolled[max(0, t - config.n):t]
        average = moving_average_curve(history, uncontrolled[t], net_fcst, config.n)
        curve_prev = realtime_reference(curve_prev, average, limit)
        return curve_prev

    def variance_reference(t, uncontrolled, prev_output, ev_default):
        horizon_target = variance_curve(pv[t], load[t] + ev_default, pv_hat[t])
        return horizon_step_reference(prev_output, horizon_target, h)

    curve = moving_average_reference if config.mode == "predictive_ma" else variance_reference

    def reference(t, uncontrolled, prev_output, ev_default, soc_pct):
        if t == 0 and prev_output_kw is not None:
            prev_output = prev_output_kw
        value = curve(t, uncontrolled, prev_output, ev_default)
        if prev_output is None:
            return uncontrolled[t]
        if config.soc_recovery_minutes is not None:
            value += soc_recovery_offset(soc_pct, scenario.battery_soc_init_pct, scenario.battery.capacity_kwh,
                                         config.soc_recovery_minutes)
        return realtime_reference(prev_output, value, limit)

    return _simulate(scenario, config.name, reference, config.allocation_order)


def run_uncontrolled(scenario, name="baseline"):
    """Battery idle and EVs at their default rate."""
    def reference(t, uncontrolled, prev_output, ev_default, soc_pct):
        return uncontrolled[t]

    return _simulate(scenario, name, reference)


def run_controller(scenario, config):
    if config.mode == "realtime":
        return run_realtime(scenario, config)
    return run_predictive(scenario, config)
