import numpy as np
import pandas as pd
import pytest

from nanogrid.assets import EvSession
from nanogrid.errors import GapError, InfeasibleSessionError, IngestionError, ParameterError, ValidationError
from nanogrid.timeseries import (PowerSeries, Scenario, load_csv, ramp_limit_from_load, random_cloud_events,
                                 resample, synth_load_day, synth_pv_day, write_csv)


def _write(path, text):
    path.write_text(text)
    return path


def test_load_csv_integer_minutes(tmp_path):
    series = load_csv(_write(tmp_path / "pv.csv", "timestamp,kw\n0,5.0\n1,6.0\n2,7.0\n"))
    assert len(series) == 3
    assert series.step_minutes == 1
    assert series.integer_minutes
    np.testing.assert_array_equal(series.values, [5.0, 6.0, 7.0])


def test_load_csv_negative_value_is_rejected(tmp_path):
    with pytest.raises(ValidationError, match="row 3"):
        load_csv(_write(tmp_path / "pv.csv", "timestamp,kw\n0,5.0\n1,-1.0\n"))


def test_load_csv_gap_names_index(tmp_path):
    with pytest.raises(GapError, match="gap at index 2"):
        load_csv(_write(tmp_path / "pv.csv", "timestamp,kw\n0,1\n1,1\n3,1\n"))


def test_load_csv_missing_column_and_bad_value(tmp_path):
    with pytest.raises(IngestionError, match="'kw'"):
        load_csv(_write(tmp_path / "a.csv", "timestamp,power\n0,1\n"))
    with pytest.raises(IngestionError, match="row 2, column 'kw'"):
        load_csv(_write(tmp_path / "b.csv", "timestamp,kw\n0,abc\n"))


def test_load_csv_iso_timestamps_and_column_map(tmp_path):
    path = _write(tmp_path / "load.csv",
                  "time,power\n2024-06-01T10:00:00,3.5\n2024-06-01T10:05:00,4.5\n")
    series = load_csv(path, {"timestamp": "time", "kw": "power"})
    assert series.step_minutes == 5
    assert series.start_time == pd.Timestamp("2024-06-01T10:00:00")
    assert not series.integer_minutes


def test_csv_round_trip_keeps_values(tmp_path):
    original = PowerSeries(0, [0.1234567, 2.5, 1e-7, 80.0])
    reread = load_csv(write_csv(original, tmp_path / "out.csv"))
    np.testing.assert_allclose(reread.values, original.values, atol=1e-6)
    assert reread.start_time == 0


def test_resample_means():
    series = PowerSeries(0, [2.0, 4.0, 6.0, 8.0])
    np.testing.assert_allclose(resample(series, 2).values, [3.0, 7.0])
    np.testing.assert_allclose(resample(series, 3).values, [4.0, 8.0])
    assert resample(series, 1) is series
    assert resample(series, 2).step_minutes == 2


def test_resample_keeps_energy_within_one_window():
    rng = np.random.default_rng(11)
    for _ in range(200):
        values = rng.uniform(0.0, 80.0, int(rng.integers(1, 300)))
        factor = int(rng.integers(2, 16))
        out = resample(PowerSeries(0, values), factor)
        energy_in = values.mean() * values.size
        energy_out = out.values.mean() * len(out) * factor
        assert abs(energy_in - energy_out) <= factor * values.max() + 1e-9


def test_resample_rejects_non_multiple():
    with pytest.raises(ParameterError):
        resample(PowerSeries(0, [1.0, 2.0], step_minutes=2), 3)


def test_series_rejects_nan():
    with pytest.raises(ValidationError, match="index 1"):
        PowerSeries(0, [1.0, np.nan])


def test_clear_day_peaks_at_noon():
    pv = synth_pv_day(80.0)
    assert pv.values.max() == pytest.approx(80.0)
    assert int(np.argmax(pv.values)) == 780
    assert pv.values[:361].sum() == 0.0
    assert pv.values[1200:].sum() == 0.0


def test_full_depth_cloud_blanks_output():
    pv = synth_pv_day(80.0, [(760, 20, 1.0)], edge_minutes=2)
    assert np.all(pv.values[760:780] == 0.0)
    assert pv.values[757] > 0.0


def test_synth_is_deterministic():
    events = [(600, 10, 0.5)]
    a = synth_pv_day(80.0, events, seed=3, noise_fraction=0.01)
    b = synth_pv_day(80.0, events, seed=3, noise_fraction=0.01)
    np.testing.assert_array_equal(a.values, b.values)


def test_overlapping_clouds_rejected():
    with pytest.raises(ParameterError, match="overlap"):
        synth_pv_day(80.0, [(600, 30, 0.5), (620, 10, 0.5)])


def test_random_cloud_events_fit_the_day():
    events = random_cloud_events(7, seed=1)
    synth_pv_day(80.0, events)
    starts = [start for start, _, _ in events]
    assert starts == sorted(starts)
    assert all(420 <= s and s + d <= 1140 for s, d, _ in events)


def test_load_day_hits_its_maximum():
    load = synth_load_day(40.0, seed=2)
    assert load.values.max() == pytest.approx(40.0)
    assert load.values.min() > 0.0


def test_ramp_rule_one_percent_of_forty():
    assert ramp_limit_from_load(40.0) == pytest.approx(0.4)
    assert ramp_limit_from_load(40.0, step_minutes=5) == pytest.approx(2.0)


def _five_minute_scenario(session):
    pv = PowerSeries(0, np.full(24, 30.0), step_minutes=5)
    load = PowerSeries(0, np.full(24, 10.0), step_minutes=5)
    return Scenario(pv, load, ev_sessions=[session], ramp_limit_kw_per_step=2.0)


def test_scenario_aligns_sessions_to_its_grid():
    session = EvSession(3, 63, capacity_kwh=10.0, soc_init_pct=30.0, soc_target_pct=80.0, p_max_kw=6.0, eta_ch=1.0)
    (aligned,) = _five_minute_scenario(session).ev_sessions
    assert (aligned.arrival_min, aligned.departure_min) == (5, 60)


def test_scenario_rejects_session_infeasible_on_its_grid():
    session = EvSession(3, 63, capacity_kwh=10.0, soc_init_pct=30.0, soc_target_pct=90.0, p_max_kw=6.0, eta_ch=1.0)
    with pytest.raises(InfeasibleSessionError, match="5-minute grid"):
        _five_minute_scenario(session)
