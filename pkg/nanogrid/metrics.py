"""Ramp-rate violation metrics and per-run results."""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from nanogrid.errors import ParameterError
from nanogrid.target import TargetCurve
from nanogrid.timeseries import PowerSeries

logger = logging.getLogger("Nanogrid.metrics")

VIOLATION_TOLERANCE_KW = 1e-9


def violation(series, ramp_limit_kw):
    """Per-step excess of |change| over the limit, and its sum."""
    values = np.asarray(series.values if isinstance(series, (PowerSeries, TargetCurve)) else series, dtype=float)
    if ramp_limit_kw <= 0:
        raise ParameterError(f"ramp limit must be > 0, got {ramp_limit_kw}")
    if values.size < 2:
        raise ParameterError(f"violation needs at least 2 samples, got {values.size}")
    per_step = np.maximum(0.0, np.abs(np.diff(values)) - ramp_limit_kw)
    return per_step, float(per_step.sum())


@dataclass(frozen=True)
class Summary:
    controller: str
    total_violation_kw: float
    violation_count: int
    max_violation_kw: float
    final_batt_soc_pct: float
    ev_completion: dict = field(default_factory=dict)
    ramp_limit_kw: float = 0.0
    runtime_s: float = 0.0

    @property
    def ev_completed(self):
        return sum(bool(done) for done in self.ev_completion.values())

    def to_record(self):
        """Deterministic fields only; wall-clock runtime is left out."""
        return {
            "controller": self.controller,
            "total_violation_kw": self.total_violation_kw,
            "violation_count": self.violation_count,
            "max_violation_kw": self.max_violation_kw,
            "final_batt_soc_pct": self.final_batt_soc_pct,
            "ramp_limit_kw": self.ramp_limit_kw,
            "ev_completed": self.ev_completed,
            "ev_sessions": len(self.ev_completion),
            "ev_completion": dict(self.ev_completion),
        }


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    name: str
    trace: pd.DataFrame
    summary: Summary

    @property
    def achieved(self):
        return self.trace["achieved_kw"].to_numpy()

    @property
    def ev_soc_columns(self):
        return [c for c in self.trace.columns if c.startswith("ev_") and c.endswith("_soc_pct")]


def _step_violations(achieved, limit):
    if achieved.size < 2:
        return np.zeros(achieved.size)
    per_step, _ = violation(achieved, limit)
    return np.concatenate([[0.0], per_step])


def build_result(name, scenario, raw_net, uncontrolled, columns, ev_soc, sessions, runtime_s=0.0):
    limit = scenario.ramp_limit_kw_per_step
    achieved = columns["achieved_kw"]
    per_step = _step_violations(achieved, limit)

    trace = pd.DataFrame({
        "step": np.arange(scenario.n_steps),
        "raw_net_kw": raw_net,
        "uncontrolled_kw": uncontrolled,
        **columns,
        "violation_kw": per_step,
    })
    for i, session in enumerate(sessions):
        trace[f"ev_{i}_soc_pct"] = ev_soc[:, i]

    end_min = scenario.n_steps * scenario.step_minutes
    completion = {}
    for session in sessions:
        if session.departure_min > end_min:
            logger.warning(f"{name}: {session.name} still connected at scenario end; "
                           f"completion judged on its final SoC")
        completion[session.name] = bool(session.soc_pct >= session.soc_target_pct - 1e-6)

    summary = Summary(
        controller=name,
        total_violation_kw=float(trace["violation_kw"].sum()),
        violation_count=int((per_step > VIOLATION_TOLERANCE_KW).sum()),
        max_violation_kw=float(per_step.max()) if per_step.size else 0.0,
        final_batt_soc_pct=float(columns["batt_soc_pct"][-1]),
        ev_completion=completion,
        ramp_limit_kw=limit,
        runtime_s=runtime_s,
    )
    return ScenarioResult(name, trace, summary)


def summarize(results):
    """One row per result, in the order given."""
    return pd.DataFrame([r.summary.to_record() for r in results]).drop(columns=["ev_completion"])
