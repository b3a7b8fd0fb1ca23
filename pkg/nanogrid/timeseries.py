"""PV and load power series: CSV ingestion, resampling and synthetic days."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from nanogrid.assets import BatterySpec, align_to_grid
from nanogrid.errors import GapError, IngestionError, ParameterError, ValidationError

logger = logging.getLogger("Nanogrid.timeseries")

DAY_MINUTES = 1440
DEFAULT_COLUMNS = {"timestamp": "timestamp", "kw": "kw"}


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Uniformly sampled kW series.

    start_time is either an integer minute offset or a pandas Timestamp;
    write_csv mirrors whichever form the series was built with.
    """
    start_time: object
    values: np.ndarray
    step_minutes: int = 1

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("power series must be a non-empty 1-D sequence")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ValidationError(f"non-finite sample at index {bad[0]}")
        if int(self.step_minutes) != self.step_minutes or self.step_minutes < 1:
            raise ValidationError(f"step_minutes must be a positive integer, got {self.step_minutes}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "step_minutes", int(self.step_minutes))
        if not isinstance(self.start_time, (int, np.integer)):
            object.__setattr__(self, "start_time", pd.Timestamp(self.start_time).floor("min"))
        else:
            object.__setattr__(self, "start_time", int(self.start_time))

    def __len__(self):
        return self.values.size

    @property
    def integer_minutes(self):
        return isinstance(self.start_time, int)

    def timestamps(self):
        if self.integer_minutes:
            return self.start_time + self.step_minutes * np.arange(len(self))
        return pd.date_range(self.start_time, periods=len(self), freq=f"{self.step_minutes}min")

    def aligned_with(self, other):
        return (len(self) == len(other)
                and self.step_minutes == other.step_minutes
                and self.start_time == other.start_time)


def check_nonnegative(series, label="series"):
    negative = np.flatnonzero(series.values < 0)
    if negative.size:
        i = negative[0]
        raise ValidationError(f"{label}: negative power {series.values[i]} kW at index {i}")
    return series


@dataclass(frozen=True, eq=False)
class Scenario:
    pv: PowerSeries
    load: PowerSeries
    ev_sessions: tuple = ()
    battery: BatterySpec = field(default_factory=BatterySpec)
    ramp_limit_kw_per_step: float = 0.4
    horizon_minutes: int = 15
    battery_soc_init_pct: float = 50.0

    def __post_init__(self):
        if not self.pv.aligned_with(self.load):
            raise ValidationError("pv and load must share start_time, step_minutes and length")
        if not self.ramp_limit_kw_per_step > 0:
            raise ValidationError(f"ramp_limit_kw_per_step must be > 0, got {self.ramp_limit_kw_per_step}")
        if self.horizon_minutes < 1:
            raise ValidationError(f"horizon_minutes must be >= 1, got {self.horizon_minutes}")
        if not self.battery.soc_min_pct <= self.battery_soc_init_pct <= self.battery.soc_max_pct:
            raise ValidationError(
                f"battery_soc_init_pct {self.battery_soc_init_pct} outside "
                f"[{self.battery.soc_min_pct}, {self.battery.soc_max_pct}]")
        check_nonnegative(self.pv, "pv")
        check_nonnegative(self.load, "load")
        object.__setattr__(self, "ev_sessions",
                           tuple(align_to_grid(s, self.step_minutes) for s in self.ev_sessions))

    @property
    def n_steps(self):
        return len(self.pv)

    @property
    def step_minutes(self):
        return self.pv.step_minutes

    @property
    def horizon_steps(self):
        return max(1, self.horizon_minutes // self.step_minutes)

    @property
    def raw_net(self):
        return self.pv.values - self.load.values


def ramp_limit_from_load(max_load_kw, percent=1.0, step_minutes=1):
    """Ramp limit per step from the percent-of-max-load-per-minute rule."""
    if max_load_kw <= 0 or percent <= 0:
        raise ParameterError(f"max_load_kw and percent must be > 0, got {max_load_kw}, {percent}")
    return max_load_kw * percent / 100.0 * step_minutes


def load_csv(path, column_map=None, nonnegative=True):
    columns = {**DEFAULT_COLUMNS, **(column_map or {})}
    ts_col, kw_col = columns["timestamp"], columns["kw"]
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")

    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise IngestionError(f"{path}: cannot parse CSV: {e}")

    for col in (ts_col, kw_col):
        if col not in df.columns:
            raise IngestionError(f"{path}: row 1 (header): missing column '{col}'")
    if df.empty:
        raise IngestionError(f"{path}: no data rows")

    kw = pd.to_numeric(df[kw_col], errors="coerce")
    bad = np.flatnonzero(kw.isna().to_numpy() | ~np.isfinite(kw.to_numpy(dtype=float)))
    if bad.size:
        i = bad[0]
        raise IngestionError(f"{path}: row {i + 2}, column '{kw_col}': cannot parse {df[kw_col].iloc[i]!r} as kW")

    raw_ts = df[ts_col]
    as_minutes = pd.to_numeric(raw_ts, errors="coerce")
    integer_minutes = as_minutes.notna().all() and (as_minutes == as_minutes.round()).all()
    if integer_minutes:
        minutes = as_minutes.to_numpy(dtype=float)
        start_time = int(minutes[0])
    else:
        parsed = pd.to_datetime(raw_ts, errors="coerce", format="ISO8601")
        missing = np.flatnonzero(parsed.isna().to_numpy())
        if missing.size:
            i = missing[0]
            raise IngestionError(f"{path}: row {i + 2}, column '{ts_col}': cannot parse {raw_ts.iloc[i]!r} as a timestamp")
        minutes = ((parsed - parsed.iloc[0]) / pd.Timedelta(minutes=1)).to_numpy(dtype=float)
        start_time = parsed.iloc[0]

    step = 1
    if minutes.size > 1:
        diffs = np.diff(minutes)
        step = diffs[0]
        if step <= 0 or step != round(step):
            raise GapError(f"{path}: timestamps not strictly increasing whole minutes at index 1")
        gaps = np.flatnonzero(diffs != step)
        if gaps.size:
            i = gaps[0] + 1
            raise GapError(
                f"{path}: gap at index {i}: expected minute {minutes[i - 1] + step:g}, found {minutes[i]:g}")

    series = PowerSeries(start_time, kw.to_numpy(dtype=float), int(step))
    if nonnegative:
        negative = np.flatnonzero(series.values < 0)
        if negative.size:
            i = negative[0]
            raise ValidationError(f"{path}: row {i + 2}, column '{kw_col}': negative power {series.values[i]} kW")

    logger.info(f"Loaded {len(series)} samples from {path} (step {series.step_minutes} min)")
    return series


def write_csv(series, path, column_map=None):
    columns = {**DEFAULT_COLUMNS, **(column_map or {})}
    stamps = series.timestamps()
    if not series.integer_minutes:
        stamps = stamps.strftime("%Y-%m-%dT%H:%M:%S")
    df = pd.DataFrame({columns["timestamp"]: stamps, columns["kw"]: series.values})
    df.to_csv(path, index=False)
    return Path(path)


def resample(series, new_step_minutes):
    if new_step_minutes < 1 or new_step_minutes % series.step_minutes:
        raise ParameterError(
            f"new step {new_step_minutes} min is not a multiple of {series.step_minutes} min")
    factor = new_step_minutes // series.step_minutes
    if factor == 1:
        return series
    groups = np.arange(len(series)) // factor
    means = pd.Series(series.values).groupby(groups).mean().to_numpy()
    return PowerSeries(series.start_time, means, new_step_minutes)


def _event_occlusion(minutes, start, duration, depth, edge_minutes):
    end = start + duration
    occlusion = np.where((minutes >= start) & (minutes < end), depth, 0.0)
    if edge_minutes > 0:
        ramp_in = (minutes >= start - edge_minutes) & (minutes < start)
        occlusion[ramp_in] = depth * (minutes[ramp_in] - start + edge_minutes + 1) / (edge_minutes + 1)
        ramp_out = (minutes >= end) & (minutes < end + edge_minutes)
        occlusion[ramp_out] = depth * (end + edge_minutes - minutes[ramp_out]) / (edge_minutes + 1)
    return occlusion


def _validate_events(cloud_events, day_minutes):
    events = sorted((float(s), float(d), float(f)) for s, d, f in cloud_events)
    for start, duration, depth in events:
        if not 0.0 <= depth <= 1.0:
            raise ParameterError(f"cloud depth {depth} outside [0, 1]")
        if duration <= 0 or start < 0 or start + duration > day_minutes:
            raise ParameterError(f"cloud event ({start}, {duration}) outside the {day_minutes}-minute day")
    for (s0, d0, _), (s1, _, _) in zip(events, events[1:]):
        if s1 < s0 + d0:
            raise ParameterError(f"cloud events at minute {s0:g} and {s1:g} overlap")
    return events


def synth_pv_day(clear_sky_peak_kw, cloud_events=(), seed=0, sunrise_min=360, sunset_min=1200,
                 edge_minutes=1, noise_fraction=0.0, day_minutes=DAY_MINUTES, step_minutes=1,
                 start_time=0):
    """Cosine clear-sky bell with cloud events scaling output by (1 - depth).

    Events are (start_min, duration_min, depth_fraction). Edge ramps sit
    outside the full-depth interval.
    """
    if clear_sky_peak_kw < 0:
        raise ParameterError(f"clear_sky_peak_kw must be >= 0, got {clear_sky_peak_kw}")
    if not 0 <= sunrise_min < sunset_min <= day_minutes:
        raise ParameterError(f"daylight window [{sunrise_min}, {sunset_min}] invalid")
    events = _validate_events(cloud_events, day_minutes)

    minutes = np.arange(0, day_minutes, step_minutes, dtype=float)
    noon = (sunrise_min + sunset_min) / 2.0
    daylight = (minutes > sunrise_min) & (minutes < sunset_min)
    envelope = np.where(daylight,
                        clear_sky_peak_kw * np.cos(np.pi * (minutes - noon) / (sunset_min - sunrise_min)),
                        0.0)

    occlusion = np.zeros_like(minutes)
    for start, duration, depth in events:
        occlusion = np.maximum(occlusion, _event_occlusion(minutes, start, duration, depth, edge_minutes))

    rng = np.random.default_rng(seed)
    flicker = 1.0 + noise_fraction * rng.standard_normal(minutes.size)
    pv = np.clip(envelope * (1.0 - occlusion) * flicker, 0.0, None)
    pv[~daylight] = 0.0
    return PowerSeries(start_time, pv, step_minutes)


def random_cloud_events(count, seed, sunrise_min=420, sunset_min=1140, min_duration=3,
                        max_duration=40, min_depth=0.3, max_depth=0.9, min_gap=5):
    """Non-overlapping events, one per equal slot of the daylight window."""
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    slot = (sunset_min - sunrise_min) / count
    if slot < min_duration + min_gap:
        raise ParameterError(f"{count} events do not fit in the daylight window")
    events = []
    for k in range(count):
        duration = int(rng.integers(min_duration, int(min(max_duration, slot - min_gap)) + 1))
        slot_start = sunrise_min + k * slot
        start = int(slot_start + rng.integers(0, int(slot - duration - min_gap) + 1))
        depth = float(rng.uniform(min_depth, max_depth))
        events.append((start, duration, round(depth, 3)))
    return events


def synth_load_day(max_load_kw, seed=0, base_fraction=0.45, open_min=420, close_min=1140,
                   transition_minutes=30.0, noise_fraction=0.002, day_minutes=DAY_MINUTES,
                   step_minutes=1, start_time=0):
    """Commercial building profile scaled so its maximum equals max_load_kw."""
    if max_load_kw <= 0:
        raise ParameterError(f"max_load_kw must be > 0, got {max_load_kw}")
    minutes = np.arange(0, day_minutes, step_minutes, dtype=float)
    opening = 1.0 / (1.0 + np.exp(-(minutes - open_min) / transition_minutes))
    closing = 1.0 / (1.0 + np.exp((minutes - close_min) / transition_minutes))
    profile = base_fraction + (1.0 - base_fraction) * opening * closing

    # AR(1) wander keeps minute-to-minute changes well under the ramp limit
    rng = np.random.default_rng(seed)
    wander = np.zeros_like(minutes)
    shocks = noise_fraction * rng.standard_normal(minutes.size)
    for i in range(1, minutes.size):
        wander[i] = 0.95 * wander[i - 1] + shocks[i]
    load = np.clip(profile * (1.0 + wander), 0.0, None)
    load *= max_load_kw / load.max()
    return PowerSeries(start_time, load, step_minutes)
