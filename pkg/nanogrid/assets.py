"""Battery and EV state models.

SoC is kept in percent. Energy math uses hours (dt_minutes / 60) because
capacities are kWh and rates are kW. Both state types are immutable;
every step function returns a new value.
"""
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from nanogrid.errors import (BoundsError, ContractError, IngestionError,
                             InfeasibleSessionError, ValidationError)

logger = logging.getLogger("Nanogrid.assets")

SOC_TOLERANCE_PCT = 1e-9
RATE_TOLERANCE_KW = 1e-9
ENERGY_TOLERANCE_KWH = 1e-9

EV_COLUMNS = ["arrival_min", "departure_min", "capacity_kwh", "soc_init_pct", "p_max_kw", "eta_ch"]


@dataclass(frozen=True)
class BatterySpec:
    capacity_kwh: float = 40.0
    p_max_kw: float = 10.0
    eta_ch: float = 0.9
    eta_dis: float = 0.9
    soc_min_pct: float = 10.0
    soc_max_pct: float = 90.0
    # asymmetric caps; both default to p_max_kw
    p_max_ch_kw: float = None
    p_max_dis_kw: float = None

    def __post_init__(self):
        if not 0 <= self.soc_min_pct < self.soc_max_pct <= 100:
            raise ValidationError(
                f"battery SoC bounds must satisfy 0 <= min < max <= 100, got "
                f"[{self.soc_min_pct}, {self.soc_max_pct}]")
        if self.capacity_kwh <= 0:
            raise ValidationError(f"battery capacity_kwh must be > 0, got {self.capacity_kwh}")
        if self.p_max_kw <= 0:
            raise ValidationError(f"battery p_max_kw must be > 0, got {self.p_max_kw}")
        for label, eta in (("eta_ch", self.eta_ch), ("eta_dis", self.eta_dis)):
            if not 0 < eta <= 1:
                raise ValidationError(f"battery {label} must be in (0, 1], got {eta}")
        if self.p_max_ch_kw is None:
            object.__setattr__(self, "p_max_ch_kw", self.p_max_kw)
        if self.p_max_dis_kw is None:
            object.__setattr__(self, "p_max_dis_kw", self.p_max_kw)
        if self.p_max_ch_kw <= 0 or self.p_max_dis_kw <= 0:
            raise ValidationError("battery charge/discharge caps must be > 0")


@dataclass(frozen=True)
class BatteryState:
    soc_pct: float


def battery_step(state, spec, p_ch_kw, p_dis_kw, dt_minutes):
    if p_ch_kw < 0 or p_dis_kw < 0:
        raise ContractError(f"battery powers must be >= 0, got charge {p_ch_kw}, discharge {p_dis_kw}")
    if p_ch_kw > 0 and p_dis_kw > 0:
        raise ContractError("battery cannot charge and discharge in the same step")
    if p_ch_kw > spec.p_max_ch_kw + RATE_TOLERANCE_KW:
        raise ContractError(f"charge {p_ch_kw} kW exceeds cap {spec.p_max_ch_kw} kW")
    if p_dis_kw > spec.p_max_dis_kw + RATE_TOLERANCE_KW:
        raise ContractError(f"discharge {p_dis_kw} kW exceeds cap {spec.p_max_dis_kw} kW")

    dt_h = dt_minutes / 60.0
    soc = state.soc_pct + (p_ch_kw * spec.eta_ch - p_dis_kw / spec.eta_dis) * dt_h * 100.0 / spec.capacity_kwh
    if soc < spec.soc_min_pct - SOC_TOLERANCE_PCT:
        raise BoundsError(f"battery SoC {soc:.9f}% would fall below soc_min_pct {spec.soc_min_pct}%")
    if soc > spec.soc_max_pct + SOC_TOLERANCE_PCT:
        raise BoundsError(f"battery SoC {soc:.9f}% would exceed soc_max_pct {spec.soc_max_pct}%")
    return BatteryState(min(max(soc, spec.soc_min_pct), spec.soc_max_pct))


def feasible_battery_range(state, spec, dt_minutes):
    """Closed interval of net injection b = p_dis - p_ch allowed this step."""
    dt_h = dt_minutes / 60.0
    above_min_kwh = max(0.0, (state.soc_pct - spec.soc_min_pct) * spec.capacity_kwh / 100.0)
    below_max_kwh = max(0.0, (spec.soc_max_pct - state.soc_pct) * spec.capacity_kwh / 100.0)
    b_max = min(spec.p_max_dis_kw, above_min_kwh * spec.eta_dis / dt_h)
    b_min = -min(spec.p_max_ch_kw, below_max_kwh / (spec.eta_ch * dt_h))
    return b_min, b_max


@dataclass(frozen=True)
class EvSession:
    """One plug-in interval. Times are scenario-relative minutes."""
    arrival_min: int
    departure_min: int
    capacity_kwh: float = 24.0
    soc_init_pct: float = 20.0
    soc_target_pct: float = 90.0
    p_max_kw: float = 6.6
    eta_ch: float = 0.9
    soc_pct: float = None
    name: str = "ev"

    def __post_init__(self):
        if self.soc_pct is None:
            object.__setattr__(self, "soc_pct", self.soc_init_pct)
        if not self.arrival_min < self.departure_min:
            raise ValidationError(f"{self.name}: arrival {self.arrival_min} must precede departure {self.departure_min}")
        if not 0 <= self.soc_init_pct <= self.soc_target_pct <= 100:
            raise ValidationError(
                f"{self.name}: need 0 <= soc_init_pct <= soc_target_pct <= 100, got "
                f"{self.soc_init_pct}, {self.soc_target_pct}")
        if self.capacity_kwh <= 0 or self.p_max_kw <= 0:
            raise ValidationError(f"{self.name}: capacity_kwh and p_max_kw must be > 0")
        if not 0 < self.eta_ch <= 1:
            raise ValidationError(f"{self.name}: eta_ch must be in (0, 1], got {self.eta_ch}")
        if self.initial_need_kwh > self.p_max_kw * self.connected_minutes / 60.0 + ENERGY_TOLERANCE_KWH:
            raise InfeasibleSessionError(
                f"{self.name}: {self.initial_need_kwh:.3f} kWh needed but only "
                f"{self.p_max_kw * self.connected_minutes / 60.0:.3f} kWh deliverable in "
                f"{self.connected_minutes} min at {self.p_max_kw} kW")

    @property
    def connected_minutes(self):
        return self.departure_min - self.arrival_min

    @property
    def initial_need_kwh(self):
        return (self.soc_target_pct - self.soc_init_pct) * self.capacity_kwh / 100.0 / self.eta_ch

    @property
    def need_kwh(self):
        """Grid-side energy still needed to reach the target."""
        return max(0.0, (self.soc_target_pct - self.soc_pct) * self.capacity_kwh / 100.0 / self.eta_ch)

    def is_active(self, now_min):
        return self.arrival_min <= now_min < self.departure_min

    def step_minutes(self, now_min, dt_minutes):
        return min(dt_minutes, self.departure_min - now_min)


def align_to_grid(session, step_minutes):
    """Snap a session onto whole simulation steps.

    Arrival rounds up and departure rounds down, so every step a session
    charges in is a full step; the shortened stay is re-checked for
    feasibility.
    """
    arrival = -(-session.arrival_min // step_minutes) * step_minutes
    departure = session.departure_min // step_minutes * step_minutes
    if (arrival, departure) == (session.arrival_min, session.departure_min):
        return session
    if departure <= arrival:
        raise ValidationError(
            f"{session.name}: stay {session.arrival_min}-{session.departure_min} min covers no whole "
            f"{step_minutes}-minute step")
    try:
        aligned = replace(session, arrival_min=arrival, departure_min=departure)
    except InfeasibleSessionError as e:
        raise InfeasibleSessionError(f"on the {step_minutes}-minute grid: {e}")
    logger.warning(f"{session.name}: stay {session.arrival_min}-{session.departure_min} min "
                   f"aligned to {arrival}-{departure} min on the {step_minutes}-minute grid")
    return aligned


def ev_step(session, p_ev_kw, dt_minutes):
    if p_ev_kw < 0:
        raise ContractError(f"{session.name}: EV rate {p_ev_kw} kW < 0 (no vehicle-to-grid)")
    if p_ev_kw > session.p_max_kw + RATE_TOLERANCE_KW:
        raise ContractError(f"{session.name}: EV rate {p_ev_kw} kW exceeds station cap {session.p_max_kw} kW")
    gain = p_ev_kw * session.eta_ch * dt_minutes / 60.0 * 100.0 / session.capacity_kwh
    return replace(session, soc_pct=min(100.0, session.soc_pct + gain))


def ev_min_rate(session, now_min, dt_minutes):
    """Smallest rate now that keeps the target reachable at p_max afterwards."""
    if not session.is_active(now_min):
        raise ContractError(f"{session.name}: not connected at minute {now_min}")
    remaining = session.departure_min - now_min
    this_step = session.step_minutes(now_min, dt_minutes)
    later = remaining - this_step
    need = session.need_kwh
    deliverable = session.p_max_kw * remaining / 60.0
    if need > deliverable + ENERGY_TOLERANCE_KWH:
        raise InfeasibleSessionError(
            f"{session.name}: needs {need:.6f} kWh but at most {deliverable:.6f} kWh "
            f"deliverable before departure at minute {session.departure_min}")
    rate = (need - session.p_max_kw * later / 60.0) * 60.0 / this_step
    return min(session.p_max_kw, max(0.0, rate))


def ev_max_rate(session, now_min, dt_minutes):
    """Default rate: p_max, or less when that would overfill the vehicle."""
    this_step = session.step_minutes(now_min, dt_minutes)
    fill_kwh = max(0.0, (100.0 - session.soc_pct) * session.capacity_kwh / 100.0)
    return min(session.p_max_kw, fill_kwh / session.eta_ch * 60.0 / this_step)


def load_ev_sessions(path):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise IngestionError(f"{path}: cannot parse CSV: {e}")
    for col in EV_COLUMNS:
        if col not in df.columns:
            raise IngestionError(f"{path}: row 1 (header): missing column '{col}'")

    sessions = []
    for i, row in df.iterrows():
        try:
            values = {col: float(row[col]) for col in EV_COLUMNS}
            target = float(row["soc_target_pct"]) if "soc_target_pct" in df.columns else 90.0
        except (TypeError, ValueError):
            raise IngestionError(f"{path}: row {i + 2}: unparsable EV session field")
        if any(math.isnan(v) for v in values.values()) or math.isnan(target):
            raise IngestionError(f"{path}: row {i + 2}: empty EV session field")
        sessions.append(EvSession(
            arrival_min=int(values["arrival_min"]),
            departure_min=int(values["departure_min"]),
            capacity_kwh=values["capacity_kwh"],
            soc_init_pct=values["soc_init_pct"],
            soc_target_pct=target,
            p_max_kw=values["p_max_kw"],
            eta_ch=values["eta_ch"],
            name=f"ev_{i}",
        ))
    logger.info(f"Loaded {len(sessions)} EV sessions from {path}")
    return tuple(sessions)


def write_ev_sessions(sessions, path):
    df = pd.DataFrame([{
        "arrival_min": s.arrival_min,
        "departure_min": s.departure_min,
        "capacity_kwh": s.capacity_kwh,
        "soc_init_pct": s.soc_init_pct,
        "p_max_kw": s.p_max_kw,
        "eta_ch": s.eta_ch,
        "soc_target_pct": s.soc_target_pct,
    } for s in sessions], columns=EV_COLUMNS + ["soc_target_pct"])
    df.to_csv(path, index=False)
    return Path(path)


def synth_ev_sessions(count, seed, day_minutes=1440, earliest_arrival=420, latest_departure=1140,
                      capacity_kwh=24.0, p_max_kw=6.6, eta_ch=0.9, soc_init_range=(10.0, 60.0),
                      soc_target_pct=90.0, stay_range=(60, 480), step_minutes=1):
    """Random sessions, feasible by construction, all departing inside the day.

    Arrivals and departures fall on the step_minutes grid.
    """
    rng = np.random.default_rng(seed)
    latest_departure = min(latest_departure, day_minutes) // step_minutes * step_minutes
    sessions = []
    for i in range(count):
        soc_init = round(float(rng.uniform(*soc_init_range)), 2)
        need = (soc_target_pct - soc_init) * capacity_kwh / 100.0 / eta_ch
        min_stay = math.ceil((math.ceil(need / p_max_kw * 60.0) + 1) / step_minutes) * step_minutes
        stay = max(int(rng.integers(stay_range[0], stay_range[1] + 1)), min_stay)
        arrival = int(rng.integers(earliest_arrival, max(earliest_arrival + 1, latest_departure - min_stay)))
        arrival = -(-arrival // step_minutes) * step_minutes
        departure = min(arrival + stay // step_minutes * step_minutes, latest_departure)
        if departure - arrival < min_stay:
            arrival = max(0, departure - min_stay)
        sessions.append(EvSession(
            arrival_min=arrival,
            departure_min=departure,
            capacity_kwh=capacity_kwh,
            soc_init_pct=soc_init,
            soc_target_pct=soc_target_pct,
            p_max_kw=p_max_kw,
            eta_ch=eta_ch,
            name=f"ev_{i}",
        ))
    return tuple(sessions)
