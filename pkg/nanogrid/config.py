"""Run configuration: JSON loading over bundled defaults, and building the
scenario, forecaster and controllers a run needs."""
import copy
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from nanogrid.assets import BatterySpec, load_ev_sessions, synth_ev_sessions
from nanogrid.control import ControllerConfig
from nanogrid.errors import ConfigError, NanogridError
from nanogrid.forecast import ForecastConfig, fit, load_model
from nanogrid.timeseries import (PowerSeries, Scenario, load_csv, ramp_limit_from_load,
                                 random_cloud_events, synth_load_day, synth_pv_day)

logger = logging.getLogger("Nanogrid.config")

DEFAULT_CONFIG = {
    "seed": 7,
    "scenario": {
        "horizon_minutes": 15,
        "step_minutes": 1,
        "synth": {
            "pv_peak_kw": 80.0,
            "max_load_kw": 40.0,
            "sunrise_min": 360,
            "sunset_min": 1200,
            "edge_minutes": 1,
            "noise_fraction": 0.0,
            "cloud_events": [
                [600, 8, 0.7],
                [655, 25, 0.6],
                [730, 4, 0.8],
                [790, 40, 0.5],
                [880, 12, 0.75],
                [960, 6, 0.6],
                [1010, 30, 0.55]
            ]
        }
    },
    "battery": {
        "capacity_kwh": 40.0,
        "p_max_kw": 10.0,
        "eta_ch": 0.9,
        "eta_dis": 0.9,
        "soc_min_pct": 10.0,
        "soc_max_pct": 90.0,
        "soc_init_pct": 50.0
    },
    "ev": {
        "count": 4,
        "capacity_kwh": 24.0,
        "p_max_kw": 6.6,
        "eta_ch": 0.9,
        "soc_target_pct": 90.0,
        "soc_init_range": [10.0, 60.0],
        "stay_range": [60, 480],
        "earliest_arrival": 420,
        "latest_departure": 1140
    },
    "ramp": {
        "rule": "percent_of_max_load",
        "percent": 1.0,
        "max_load_kw": 40.0
    },
    "controllers": [
        {"name": "realtime", "mode": "realtime"},
        {"name": "predictive_ma", "mode": "predictive_ma", "n": 15, "soc_recovery_minutes": 120},
        {"name": "predictive_var", "mode": "predictive_var"}
    ],
    "forecaster": {
        "kind": "mlp",
        "input_window": 30,
        "horizon": 15,
        "hidden_layers": [32, 32],
        "epochs": 60,
        "training_days": 3
    },
    "tuning": {
        "candidates": [0, 2, 5, 10, 15]
    },
    "output": {
        "dir": "results",
        "n_jobs": 1
    }
}

RAMP_RULES = ("percent_of_max_load", "absolute")
CONTROLLER_KEYS = {"name", "mode", "n", "h", "allocation_order", "soc_recovery_minutes"}
FORECASTER_EXTRA_KEYS = {"training_days", "history_pv_csv", "history_load_csv", "model_path"}


def deep_merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    seed: int
    battery: BatterySpec
    battery_soc_init_pct: float
    controllers: tuple
    forecaster: dict
    candidates: tuple
    output_dir: Path
    n_jobs: int = 1
    base_dir: Path = Path(".")

    @property
    def scenario(self):
        return self.raw["scenario"]

    @property
    def synthetic(self):
        return "synth" in self.scenario

    def ramp_limit(self, step_minutes):
        ramp = self.raw["ramp"]
        if ramp["rule"] == "absolute":
            return float(ramp["kw_per_min"]) * step_minutes
        return ramp_limit_from_load(float(ramp["max_load_kw"]), float(ramp.get("percent", 1.0)), step_minutes)

    def resolve(self, path):
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path


def _read_json(path):
    path = Path(path)
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")


def _merge_user_config(user):
    if not isinstance(user, dict):
        raise ConfigError("config: top level must be an object")
    user_scenario = user.get("scenario") or {}
    if "files" in user_scenario and "synth" in user_scenario:
        raise ConfigError("scenario: give either 'files' or 'synth', not both")
    defaults = copy.deepcopy(DEFAULT_CONFIG)
    if "files" in user_scenario:
        del defaults["scenario"]["synth"]
    return deep_merge(defaults, user)


def _validate_ramp(raw):
    ramp = raw.get("ramp") or {}
    rule = ramp.get("rule")
    if rule not in RAMP_RULES:
        raise ConfigError(f"ramp.rule must be one of {RAMP_RULES}, got {rule!r}")
    if rule == "absolute":
        if not isinstance(ramp.get("kw_per_min"), (int, float)) or ramp["kw_per_min"] <= 0:
            raise ConfigError("ramp.kw_per_min must be a positive number for the absolute rule")
    elif not isinstance(ramp.get("max_load_kw"), (int, float)) or ramp["max_load_kw"] <= 0:
        raise ConfigError("ramp.max_load_kw is required by the percent_of_max_load rule")


def _battery_from(section):
    section = dict(section)
    soc_init = section.pop("soc_init_pct", 50.0)
    known = {f.name for f in fields(BatterySpec)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"battery: unknown field(s) {sorted(unknown)}")
    try:
        spec = BatterySpec(**section)
    except NanogridError as e:
        raise ConfigError(f"battery: {e}")
    if not spec.soc_min_pct <= soc_init <= spec.soc_max_pct:
        raise ConfigError(f"battery.soc_init_pct {soc_init} outside [{spec.soc_min_pct}, {spec.soc_max_pct}]")
    return spec, float(soc_init)


def _validate_controllers(controllers, forecaster):
    if not isinstance(controllers, list) or not controllers:
        raise ConfigError("controllers: at least one controller is required")
    names = []
    for i, entry in enumerate(controllers):
        unknown = set(entry) - CONTROLLER_KEYS
        if unknown:
            raise ConfigError(f"controllers[{i}]: unknown field(s) {sorted(unknown)}")
        if "mode" not in entry:
            raise ConfigError(f"controllers[{i}]: field 'mode' is required")
        name = entry.get("name", entry["mode"])
        if entry["mode"] != "realtime" and forecaster is None:
            raise ConfigError(f"controllers[{i}] ({name}): predictive mode requires field 'forecaster'")
        names.append(name)
    if len(set(names)) != len(names):
        raise ConfigError(f"controllers: names must be unique, got {names}")


def load_run_config(path=None, out=None, seed=None, candidates=None, n_jobs=None):
    """Defaults, deep-merged with the JSON file at path, then flag overrides."""
    user = _read_json(path) if path else {}
    raw = _merge_user_config(user)
    if out is not None:
        raw["output"]["dir"] = str(out)
    if seed is not None:
        raw["seed"] = int(seed)
    if candidates is not None:
        raw["tuning"]["candidates"] = list(candidates)
    if n_jobs is not None:
        raw["output"]["n_jobs"] = int(n_jobs)

    if not isinstance(raw.get("seed"), int):
        raise ConfigError(f"seed must be an integer, got {raw.get('seed')!r}")
    if "files" not in raw["scenario"] and "synth" not in raw["scenario"]:
        raise ConfigError("scenario: one of 'files' or 'synth' is required")
    if "files" in raw["scenario"]:
        for key in ("pv_csv", "load_csv"):
            if key not in raw["scenario"]["files"]:
                raise ConfigError(f"scenario.files.{key} is required")
    _validate_ramp(raw)
    battery, soc_init = _battery_from(raw["battery"])
    forecaster = raw.get("forecaster")
    _validate_controllers(raw["controllers"], forecaster)
    if forecaster is not None:
        unknown = set(forecaster) - FORECASTER_EXTRA_KEYS - {f.name for f in fields(ForecastConfig)}
        if unknown:
            raise ConfigError(f"forecaster: unknown field(s) {sorted(unknown)}")

    run_config = RunConfig(
        raw=raw,
        seed=raw["seed"],
        battery=battery,
        battery_soc_init_pct=soc_init,
        controllers=tuple(raw["controllers"]),
        forecaster=forecaster,
        candidates=tuple(int(n) for n in raw["tuning"]["candidates"]),
        output_dir=Path(raw["output"]["dir"]),
        n_jobs=int(raw["output"].get("n_jobs", 1)),
        base_dir=Path(path).parent if path else Path("."),
    )
    logger.info(f"Loaded run config from {path or 'defaults'} (seed {run_config.seed})")
    return run_config


def _synth_day(config, synth, seed, cloud_events, step_minutes):
    pv = synth_pv_day(
        float(synth["pv_peak_kw"]), cloud_events, seed=seed,
        sunrise_min=synth.get("sunrise_min", 360), sunset_min=synth.get("sunset_min", 1200),
        edge_minutes=synth.get("edge_minutes", 1), noise_fraction=synth.get("noise_fraction", 0.0),
        step_minutes=step_minutes)
    load = synth_load_day(float(synth["max_load_kw"]), seed=seed, step_minutes=step_minutes)
    return pv, load


def _synth_sessions(config, step_minutes=1):
    ev = config.raw["ev"]
    return synth_ev_sessions(
        int(ev.get("count", 0)), config.seed,
        earliest_arrival=ev.get("earliest_arrival", 420),
        latest_departure=ev.get("latest_departure", 1140),
        capacity_kwh=float(ev["capacity_kwh"]), p_max_kw=float(ev["p_max_kw"]),
        eta_ch=float(ev["eta_ch"]), soc_init_range=tuple(ev.get("soc_init_range", (10.0, 60.0))),
        soc_target_pct=float(ev["soc_target_pct"]), stay_range=tuple(ev.get("stay_range", (60, 480))),
        step_minutes=step_minutes)


def build_scenario(config):
    scenario = config.scenario
    if config.synthetic:
        synth = scenario["synth"]
        step = int(scenario.get("step_minutes", 1))
        pv, load = _synth_day(config, synth, config.seed, synth.get("cloud_events", []), step)
        sessions = _synth_sessions(config, step)
    else:
        files = scenario["files"]
        pv = load_csv(config.resolve(files["pv_csv"]), files.get("pv_columns"))
        load = load_csv(config.resolve(files["load_csv"]), files.get("load_columns"))
        sessions = load_ev_sessions(config.resolve(files["ev_csv"])) if files.get("ev_csv") else ()

    built = Scenario(
        pv=pv,
        load=load,
        ev_sessions=sessions,
        battery=config.battery,
        ramp_limit_kw_per_step=config.ramp_limit(pv.step_minutes),
        horizon_minutes=int(scenario.get("horizon_minutes", 15)),
        battery_soc_init_pct=config.battery_soc_init_pct,
    )
    logger.info(f"Scenario: {built.n_steps} steps of {built.step_minutes} min, "
                f"{len(built.ev_sessions)} EV sessions, ramp limit {built.ramp_limit_kw_per_step:g} kW/step")
    return built


def forecast_config(config):
    if config.forecaster is None:
        raise ConfigError("field 'forecaster' is required")
    section = {k: v for k, v in config.forecaster.items() if k not in FORECASTER_EXTRA_KEYS}
    section.setdefault("seed", config.seed)
    try:
        return ForecastConfig(**section)
    except NanogridError as e:
        raise ConfigError(f"forecaster: {e}")


def training_history(config, scenario):
    """PV and load the forecaster learns from, kept apart from the evaluated day when possible."""
    section = config.forecaster or {}
    if config.synthetic:
        synth = config.scenario["synth"]
        days = int(section.get("training_days", 3))
        if days < 1:
            raise ConfigError(f"forecaster.training_days must be >= 1, got {days}")
        step = scenario.step_minutes
        event_count = max(1, len(synth.get("cloud_events", [])))
        pv_days, load_days = [], []
        for k in range(1, days + 1):
            events = random_cloud_events(event_count, config.seed + k,
                                         sunrise_min=synth.get("sunrise_min", 360) + 60,
                                         sunset_min=synth.get("sunset_min", 1200) - 60)
            pv, load = _synth_day(config, synth, config.seed + k, events, step)
            pv_days.append(pv.values)
            load_days.append(load.values)
        return (PowerSeries(0, np.concatenate(pv_days), step),
                PowerSeries(0, np.concatenate(load_days), step))

    if section.get("history_pv_csv") and section.get("history_load_csv"):
        return load_csv(config.resolve(section["history_pv_csv"])), load_csv(config.resolve(section["history_load_csv"]))
    logger.warning("No forecaster history configured; training in-sample on the scenario itself")
    return scenario.pv, scenario.load


def build_forecaster(config, scenario):
    fc = forecast_config(config)
    model_path = (config.forecaster or {}).get("model_path")
    if fc.kind == "mlp" and model_path and config.resolve(model_path).exists():
        model = load_model(config.resolve(model_path))
        logger.info(f"Loaded forecaster from {model_path}")
        return model
    history_pv, history_load = training_history(config, scenario) if fc.kind == "mlp" else (None, None)
    return fit(history_pv, history_load, fc)


def needs_forecaster(entries):
    return any(entry["mode"] != "realtime" for entry in entries)


def build_controllers(config, forecaster=None, entries=None):
    built = []
    for entry in entries if entries is not None else config.controllers:
        options = dict(entry)
        options.setdefault("name", options["mode"])
        if options["mode"] != "realtime":
            options["forecaster"] = forecaster
        built.append(ControllerConfig(**options))
    return tuple(built)
