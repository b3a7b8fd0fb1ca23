"""End-to-end properties of the simulator on the bundled and constructed scenarios."""
import numpy as np
import pytest

from nanogrid.assets import (BatterySpec, BatteryState, EvSession, battery_step, ev_step,
                             feasible_battery_range, synth_ev_sessions)
from nanogrid.config import build_controllers, build_forecaster, build_scenario, load_run_config
from nanogrid.control import ControllerConfig, run_controller, run_predictive, run_realtime
from nanogrid.sim import compare
from nanogrid.target import TargetCurve, centered_moving_average, clamp_to_ramp, moving_average_curve


@pytest.fixture(scope="module")
def bundled_config():
    return load_run_config()


@pytest.fixture(scope="module")
def bundled(bundled_config):
    return build_scenario(bundled_config)


@pytest.fixture(scope="module")
def bundled_results(bundled_config, bundled):
    """The configured controllers with the network forecaster trained on synthetic history."""
    forecaster = build_forecaster(bundled_config, bundled)
    assert forecaster.kind == "mlp" and forecaster.fitted
    report, results = compare(bundled, build_controllers(bundled_config, forecaster))
    return report.set_index("controller"), results


def test_controllers_rank_on_the_bundled_day(bundled_results):
    report, _ = bundled_results
    totals = report["total_violation_kw"]
    assert (report["error"] == "").all()
    assert totals["predictive_ma"] < totals["predictive_var"] < totals["realtime"] < totals["baseline"]


def test_moving_average_ends_the_day_with_more_charge(bundled_results):
    report, _ = bundled_results
    soc = report["final_batt_soc_pct"]
    assert soc["predictive_ma"] >= soc["realtime"]


def test_evs_finish_on_the_bundled_day(bundled_results):
    _, results = bundled_results
    for result in results.values():
        assert all(result.summary.ev_completion.values())


def test_battery_stays_within_bounds_on_the_bundled_day(bundled, bundled_results):
    _, results = bundled_results
    spec = bundled.battery
    for result in results.values():
        soc = result.trace["batt_soc_pct"]
        assert soc.min() >= spec.soc_min_pct - 1e-9
        assert soc.max() <= spec.soc_max_pct + 1e-9


def test_soc_safety_over_random_actions():
    rng = np.random.default_rng(42)
    spec = BatterySpec(capacity_kwh=5.0, p_max_kw=10.0)
    for _ in range(10_000):
        state = BatteryState(float(rng.uniform(spec.soc_min_pct, spec.soc_max_pct)))
        for _ in range(20):
            b_min, b_max = feasible_battery_range(state, spec, 1)
            b = float(rng.uniform(b_min, b_max)) if rng.random() < 0.8 else float(rng.choice([b_min, b_max]))
            state = battery_step(state, spec, max(0.0, -b), max(0.0, b), 1)
            assert spec.soc_min_pct - 1e-9 <= state.soc_pct <= spec.soc_max_pct + 1e-9


def test_ev_completion_over_random_sessions(make_scenario, perfect_model):
    rng = np.random.default_rng(8)
    configs = [ControllerConfig(),
               ControllerConfig(mode="predictive_ma", n=5, forecaster=perfect_model()),
               ControllerConfig(mode="predictive_var", forecaster=perfect_model())]
    failures = 0
    for k in range(40):
        sessions = synth_ev_sessions(25, seed=k, day_minutes=240, earliest_arrival=0, latest_departure=240,
                                     capacity_kwh=10.0, stay_range=(20, 200))
        pv = np.clip(40.0 + np.cumsum(rng.normal(0, 2, 240)), 0.0, None)
        scenario = make_scenario(pv, sessions=sessions, battery=BatterySpec(capacity_kwh=20.0))
        for config in configs:
            result = run_controller(scenario, config)
            failures += sum(not done for done in result.summary.ev_completion.values())
            for i, session in enumerate(sessions):
                assert result.trace[f"ev_{i}_soc_pct"].iloc[-1] >= session.soc_target_pct - 1e-6
    assert failures == 0


def test_clamped_curves_respect_the_limit():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        curve = TargetCurve(rng.normal(0.0, 5.0, 40))
        clamped = clamp_to_ramp(curve, float(curve.values[0]), 0.4)
        assert np.abs(np.diff(clamped.values)).max() <= 0.4 + 1e-9


def test_moving_average_with_perfect_forecasts_is_centred():
    rng = np.random.default_rng(5)
    net = np.cumsum(rng.normal(0.0, 1.0, 300))
    n = 10
    expected = centered_moving_average(net, n)
    for t in range(n, net.size - n):
        assert moving_average_curve(net[max(0, t - n):t], net[t], net[t + 1:t + 16], n) == \
            pytest.approx(expected[t], abs=1e-9)


def test_soc_dynamics_hand_values():
    spec = BatterySpec(capacity_kwh=40.0, eta_ch=0.9, eta_dis=0.9)
    assert battery_step(BatteryState(50.0), spec, 10.0, 0.0, 6).soc_pct == pytest.approx(52.25, abs=1e-9)
    assert battery_step(BatteryState(50.0), spec, 0.0, 9.0, 6).soc_pct == pytest.approx(47.5, abs=1e-9)
    ev = EvSession(0, 120, capacity_kwh=24.0, soc_init_pct=40.0, soc_target_pct=90.0, eta_ch=1.0)
    assert ev_step(ev, 6.0, 60).soc_pct == pytest.approx(65.0, abs=1e-9)


def test_look_ahead_removes_violations_reaction_cannot(square_dip, perfect_model):
    predictive = run_predictive(square_dip, ControllerConfig(mode="predictive_ma", n=17, forecaster=perfect_model(20)))
    realtime = run_realtime(square_dip)
    assert predictive.summary.total_violation_kw == pytest.approx(0.0, abs=1e-9)
    assert realtime.summary.total_violation_kw > 0.0
