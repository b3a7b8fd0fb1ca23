import json

import numpy as np
import pandas as pd
import pytest

from nanogrid.control import ControllerConfig, run_realtime
from nanogrid.errors import ParameterError
from nanogrid.forecast import ForecastConfig, ForecastModel
from nanogrid.metrics import summarize, violation
from nanogrid.plot_data import PlotDataWriter
from nanogrid.sim import compare, run_baseline, soc_comparison, write_compare, write_summary, write_trace
from nanogrid.timeseries import PowerSeries, Scenario, synth_load_day, synth_pv_day


def test_violation_hand_example():
    x0 = 3.0
    per_step, total = violation([x0, x0 + 0.5, x0 + 0.2, x0 + 1.2], 0.4)
    np.testing.assert_allclose(per_step, [0.1, 0.0, 0.6], atol=1e-12)
    assert total == pytest.approx(0.7)


def test_violation_of_constant_is_zero():
    assert violation(PowerSeries(0, np.full(10, 4.2)), 0.4)[1] == 0.0


def test_violation_monotone_in_limit():
    rng = np.random.default_rng(0)
    values = np.cumsum(rng.normal(0, 1, 200))
    totals = [violation(values, limit)[1] for limit in (0.1, 0.2, 0.4, 0.8, 1.6)]
    assert totals == sorted(totals, reverse=True)


def test_violation_needs_two_samples():
    with pytest.raises(ParameterError):
        violation([1.0], 0.4)


def test_trace_total_matches_summary(square_dip):
    result = run_realtime(square_dip)
    assert result.trace["violation_kw"].iloc[0] == 0.0
    assert result.trace["violation_kw"].sum() == pytest.approx(result.summary.total_violation_kw, abs=1e-9)
    recomputed = violation(result.trace["achieved_kw"].to_numpy(), square_dip.ramp_limit_kw_per_step)[1]
    assert recomputed == pytest.approx(result.summary.total_violation_kw, abs=1e-9)


def test_baseline_keeps_battery_idle(square_dip):
    result = run_baseline(square_dip)
    assert result.name == "baseline"
    np.testing.assert_allclose(result.trace["batt_soc_pct"], square_dip.battery_soc_init_pct)


def test_compare_rows_and_order(square_dip, perfect_model):
    controllers = [
        ControllerConfig(mode="predictive_ma", n=17, forecaster=perfect_model(20), name="ma"),
        ControllerConfig(name="rt"),
    ]
    report, results = compare(square_dip, controllers)
    assert list(report["controller"]) == ["baseline", "ma", "rt"]
    assert set(results) == {"baseline", "ma", "rt"}
    totals = report.set_index("controller")["total_violation_kw"]
    assert totals["ma"] < totals["rt"] < totals["baseline"]
    assert (report["error"] == "").all()


def test_compare_single_controller(square_dip):
    report, _ = compare(square_dip, [ControllerConfig()])
    assert len(report) == 2


def test_compare_reports_failures_without_aborting(make_scenario):
    unfitted = ForecastModel(ForecastConfig(kind="mlp", input_window=5, horizon=15))
    controllers = [ControllerConfig(name="a"),
                   ControllerConfig(mode="predictive_var", forecaster=unfitted, name="b")]
    report, results = compare(make_scenario(np.full(60, 25.0)), controllers)
    assert list(report["controller"]) == ["baseline", "a", "b"]
    rows = report.set_index("controller")
    assert "not fitted" in rows.loc["b", "error"]
    assert rows.loc["a", "error"] == ""
    assert "b" not in results


def test_compare_rejects_duplicate_names(square_dip):
    with pytest.raises(ParameterError):
        compare(square_dip, [ControllerConfig(name="x"), ControllerConfig(name="x")])
    with pytest.raises(ParameterError):
        compare(square_dip, [])


def test_clear_slow_day_has_no_violations(perfect_model):
    pv = synth_pv_day(80.0)
    load = synth_load_day(40.0, noise_fraction=0.0)
    scenario = Scenario(pv, load, horizon_minutes=15)
    controllers = [ControllerConfig(name="realtime"),
                   ControllerConfig(mode="predictive_ma", n=10, forecaster=perfect_model(), name="predictive_ma"),
                   ControllerConfig(mode="predictive_var", forecaster=perfect_model(), name="predictive_var")]
    report, _ = compare(scenario, controllers)
    assert report["total_violation_kw"].to_numpy() == pytest.approx(np.zeros(4), abs=1e-9)


def test_writers(tmp_path, square_dip, perfect_model):
    controllers = [ControllerConfig(name="realtime")]
    report, results = compare(square_dip, controllers)
    trace_path = write_trace(results["realtime"], tmp_path / "out" / "trace.csv")
    trace = pd.read_csv(trace_path)
    assert list(trace.columns[:6]) == ["step", "raw_net_kw", "target_kw", "achieved_kw", "batt_soc_pct",
                                       "violation_kw"]
    assert len(trace) == square_dip.n_steps

    summary = json.loads(write_summary(results.values(), tmp_path / "summary.json").read_text())
    assert [r["controller"] for r in summary] == ["baseline", "realtime"]
    assert "runtime_s" not in summary[0]
    assert summary[1]["ramp_limit_kw"] == pytest.approx(0.4)

    reread = pd.read_csv(write_compare(report, tmp_path / "compare.csv"))
    assert list(reread["controller"]) == ["baseline", "realtime"]
    assert not list(tmp_path.glob("**/*.tmp"))


def test_summarize_table(square_dip):
    table = summarize([run_baseline(square_dip), run_realtime(square_dip)])
    assert list(table["controller"]) == ["baseline", "realtime"]


def test_soc_comparison_and_plot_data(tmp_path, square_dip, perfect_model):
    controllers = [ControllerConfig(name="realtime"),
                   ControllerConfig(mode="predictive_ma", n=17, forecaster=perfect_model(20), name="ma")]
    _, results = compare(square_dip, controllers)
    frame = soc_comparison(results)
    assert set(frame.columns) == {"baseline", "realtime", "ma"}
    assert len(frame) == square_dip.n_steps

    paths = PlotDataWriter(tmp_path).write(results, square_dip.ramp_limit_kw_per_step)
    assert {p.name for p in paths} == {"output.json", "ramp_changes.json", "soc_comparison.json"}
    ramps = json.loads((tmp_path / "data" / "ramp_changes.json").read_text())
    assert ramps["ramp_limit_kw"] == pytest.approx(0.4)
    assert len(ramps["controllers"]["ma"]["change_kw"]) == square_dip.n_steps
