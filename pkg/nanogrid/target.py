"""Reference curves for the net output: real-time clamp, moving average,
variance-damped look-ahead, ramp clamping and window tuning."""
import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from nanogrid.errors import ParameterError

logger = logging.getLogger("Nanogrid.target")

ZERO_PV_SUM_KW = 1e-6
CURVE_KINDS = ("realtime", "moving_average", "variance")


@dataclass(frozen=True, eq=False)
class TargetCurve:
    values: np.ndarray
    kind: str = "moving_average"

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise ParameterError(f"curve kind must be one of {CURVE_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return self.values.size


def realtime_reference(prev_output_kw, raw_net_kw, ramp_limit_kw):
    if ramp_limit_kw <= 0:
        raise ParameterError(f"ramp limit must be > 0, got {ramp_limit_kw}")
    if prev_output_kw is None:
        return raw_net_kw
    return min(max(raw_net_kw, prev_output_kw - ramp_limit_kw), prev_output_kw + ramp_limit_kw)


def moving_average_curve(net_hist, net_now, net_fcst, n):
    """Mean of the 2n+1 net values centred on now.

    The window shrinks symmetrically when fewer than n past samples or n
    forecasts are available.
    """
    if n < 0:
        raise ParameterError(f"moving-average half window must be >= 0, got {n}")
    net_hist = np.asarray(net_hist, dtype=float)
    net_fcst = np.asarray(net_fcst, dtype=float)
    k = min(int(n), net_hist.size, net_fcst.size)
    if k == 0:
        return float(net_now)
    window = np.concatenate([net_hist[-k:], [net_now], net_fcst[:k]])
    return float(window.mean())


def centered_moving_average(values, n):
    """Whole-series centred mean with the same symmetric edge shrink."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for t in range(values.size):
        k = min(n, t, values.size - 1 - t)
        out[t] = values[t - k:t + k + 1].mean()
    return out


def variance_damping(pv_now, pv_fcst):
    window = np.concatenate([[pv_now], np.asarray(pv_fcst, dtype=float)])
    total = window.sum()
    if total <= ZERO_PV_SUM_KW:
        return 0.0
    return float(np.clip(1.0 - np.sqrt(window.var()) / total, 0.0, 1.0))


def variance_curve(pv_now, load_now, pv_fcst):
    """Target for step t+h: forecast PV change damped by its dispersion."""
    pv_fcst = np.asarray(pv_fcst, dtype=float)
    if pv_fcst.size < 1:
        raise ParameterError("variance curve needs a horizon of at least one forecast")
    damping = variance_damping(pv_now, pv_fcst)
    return damping * (pv_fcst[-1] - pv_now) + pv_now - load_now


def horizon_step_reference(prev_output_kw, horizon_target_kw, h):
    """Reference for this step on a straight line to a target h steps out."""
    if prev_output_kw is None:
        return horizon_target_kw
    return prev_output_kw + (horizon_target_kw - prev_output_kw) / max(1, h)


def soc_recovery_offset(soc_pct, setpoint_pct, capacity_kwh, recovery_minutes):
    """Output offset that would close the SoC gap to setpoint in recovery_minutes.

    Negative below the setpoint, so the battery absorbs the difference.
    """
    if recovery_minutes <= 0:
        raise ParameterError(f"recovery_minutes must be > 0, got {recovery_minutes}")
    return (soc_pct - setpoint_pct) / 100.0 * capacity_kwh * 60.0 / recovery_minutes


def clamp_to_ramp(curve, start_kw, ramp_limit_kw):
    if ramp_limit_kw <= 0:
        raise ParameterError(f"ramp limit must be > 0, got {ramp_limit_kw}")
    clamped = np.empty_like(curve.values)
    prev = start_kw
    for t, value in enumerate(curve.values):
        prev = min(max(value, prev - ramp_limit_kw), prev + ramp_limit_kw)
        clamped[t] = prev
    return TargetCurve(clamped, curve.kind)


def _candidate_violation(scenario, n, config):
    from nanogrid.control import run_predictive

    result = run_predictive(scenario, replace(config, mode="predictive_ma", n=n, name=f"ma_n{n}"))
    return n, result.summary.total_violation_kw


def tune_window(scenario, candidate_ns, config, n_jobs=1):
    """Pick the half window with the least total violation; ties go to the smaller n."""
    candidates = sorted({int(n) for n in candidate_ns})
    if not candidates:
        raise ParameterError("tune_window needs at least one candidate n")
    if candidates[0] < 0:
        raise ParameterError(f"candidate n must be >= 0, got {candidates[0]}")
    h = config.horizon_steps(scenario)
    if candidates[-1] > h:
        raise ParameterError(f"candidate n={candidates[-1]} exceeds the forecast horizon {h}")

    rows = Parallel(n_jobs=n_jobs)(delayed(_candidate_violation)(scenario, n, config) for n in candidates)
    table = pd.DataFrame(rows, columns=["n", "total_violation_kw"]).sort_values("n").reset_index(drop=True)
    best = int(table.loc[table["total_violation_kw"].idxmin(), "n"])
    for n, total in rows:
        logger.debug(f"n={n}: total violation {total:.4f} kW")
    logger.info(f"Tuned moving-average half window: n={best}")
    return best, table
