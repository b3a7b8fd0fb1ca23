import logging

import numpy as np
import pytest

from nanogrid.assets import BatterySpec
from nanogrid.forecast import ForecastConfig, fit
from nanogrid.timeseries import PowerSeries, Scenario


@pytest.fixture(autouse=True)
def quiet_logs(caplog):
    caplog.set_level(logging.WARNING, logger="Nanogrid")


@pytest.fixture
def make_scenario():
    """Scenario from plain arrays; load defaults to a constant 10 kW."""
    def build(pv, load=None, sessions=(), battery=None, limit=0.4, horizon=15, soc_init=50.0):
        pv = np.asarray(pv, dtype=float)
        load = np.full(pv.size, 10.0) if load is None else np.asarray(load, dtype=float)
        return Scenario(
            pv=PowerSeries(0, pv),
            load=PowerSeries(0, load),
            ev_sessions=sessions,
            battery=battery or BatterySpec(),
            ramp_limit_kw_per_step=limit,
            horizon_minutes=horizon,
            battery_soc_init_pct=soc_init,
        )
    return build


@pytest.fixture
def perfect_model():
    def build(horizon=15):
        return fit(None, None, ForecastConfig(kind="perfect", input_window=5, horizon=horizon))
    return build


@pytest.fixture
def square_dip(make_scenario):
    """Constant 30 kW PV with a 12 kW dip lasting 60 minutes from minute 100."""
    pv = np.full(240, 30.0)
    pv[100:160] -= 12.0
    return make_scenario(pv, horizon=20)
