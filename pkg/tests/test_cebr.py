import datetime as dt

import numpy as np
import pytest

from exceedance import ar, cebr, series, theory
from exceedance.errors import NoTrialsError, NotAForecastInstance


def make_series(values):
    return series.DailySeries(dt.date(2000, 1, 1), np.asarray(values, dtype=float))


def test_alternating_series_rate_is_one():
    model = cebr.empirical_cebr(make_series([-1.0, 1.0, -1.0, 1.0]), tau=0.0)
    assert model.rate == 1.0
    assert model.trials_used == 2


def test_all_above_threshold_is_no_trials():
    with pytest.raises(NoTrialsError):
        cebr.empirical_cebr(make_series([1.0, 2.0, 3.0]), tau=0.0)


def test_gap_pairs_excluded_from_both_counts():
    # days: -1, gap, -1, 2, -1 -> only pairs (2,3) and (3,4) are complete;
    # day 2 qualifies (below tau, followed by exceedance), day 3 is above tau
    model = cebr.empirical_cebr(make_series([-1.0, np.nan, -1.0, 2.0, -1.0]), tau=0.0)
    assert model.trials_used == 1
    assert model.rate == 1.0


def test_forecast_echoes_rate_below_threshold():
    model = cebr.CEBRModel(tau=0.0, rate=0.3, trials_used=10)
    assert cebr.cebr_forecast(model, -1.0) == 0.3
    assert cebr.cebr_forecast(model, 0.0) == 0.3  # boundary day is a forecast instance


def test_forecast_above_threshold_signals_no_instance():
    model = cebr.CEBRModel(tau=0.0, rate=0.3, trials_used=10)
    with pytest.raises(NotAForecastInstance):
        cebr.cebr_forecast(model, 1.0)


def test_zero_rate_is_allowed():
    model = cebr.empirical_cebr(make_series([-3.0, -2.0, -1.0, -2.5]), tau=0.0)
    assert model.rate == 0.0
    assert cebr.cebr_forecast(model, -1.0) == 0.0


def test_iid_rate_matches_one_minus_q():
    q = 0.7
    sim = ar.simulate_ar1(0.0, 1.0, 50_000, seed=21)
    tau = float(np.quantile(sim.values, q))
    model = cebr.empirical_cebr(sim, tau)
    sd = np.sqrt((1 - q) * q / model.trials_used)
    assert abs(model.rate - (1.0 - q)) < 3.0 * sd


def test_correlated_rate_sits_below_one_minus_q():
    # positive correlation keeps the process below the threshold it started under
    q = 0.5
    below = 0
    for seed in range(20):
        sim = ar.simulate_ar1(0.72, 3.06, 5000, seed=seed)
        tau = float(np.quantile(sim.values, q))
        below += cebr.empirical_cebr(sim, tau).rate < (1.0 - q)
    assert below >= 18


def test_empirical_rate_matches_quadrature():
    sim = ar.simulate_ar1(0.72, 3.06, 100_000, seed=8)
    params = theory.TheoryParams(0.72, 3.06, 0.5)
    tau = theory.threshold_from_quantile(params)
    model = cebr.empirical_cebr(sim, tau)
    assert abs(model.rate - theory.theoretical_cebr(params)) < 0.01


def test_json_round_trip():
    model = cebr.CEBRModel(tau=1.5, rate=0.25, trials_used=400)
    again = cebr.CEBRModel.from_json(model.to_json())
    assert again == model
