import datetime as dt
import io
import math
import warnings

import numpy as np
import pytest
from scipy.special import ndtr

from exceedance import ensemble, series, theory, verify
from exceedance.errors import (
    InsufficientDataError,
    MissingCalibrationError,
    StructureError,
)

ZERO_CLIM = series.ClimatologyModel(np.zeros(5))


def small_ensemble(members, epoch=dt.date(1979, 1, 1), days=None):
    members = np.asarray(members, dtype=float)
    if days is None:
        days = np.arange(members.shape[0])
    return ensemble.EnsembleSeries(epoch, days, members)


# -- grid lookup ---------------------------------------------------------------


def test_nearest_grid_point_hannover_like():
    grid = ensemble.GridSpec(lat0=30.0, lon0=0.0, dlat=2.5, dlon=2.5, nlat=20, nlon=40)
    idx = ensemble.nearest_grid_point(52.37, 9.73, grid)
    assert grid.coords(*idx) == (52.5, 10.0)


def test_nearest_grid_point_exact_node():
    grid = ensemble.GridSpec(0.0, 0.0, 2.5, 2.5, 10, 10)
    assert ensemble.nearest_grid_point(5.0, 7.5, grid) == (2, 3)


def test_nearest_grid_point_midpoint_takes_lower_index():
    grid = ensemble.GridSpec(0.0, 0.0, 2.5, 2.5, 10, 10)
    assert ensemble.nearest_grid_point(1.25, 1.25, grid) == (0, 0)


def test_nearest_grid_point_clamps_to_grid():
    grid = ensemble.GridSpec(0.0, 0.0, 2.5, 2.5, 4, 4)
    assert ensemble.nearest_grid_point(99.0, -99.0, grid) == (3, 0)


# -- anomaly conversion ----------------------------------------------------------


def test_member_equal_to_climatology_maps_to_zero():
    clim = series.ClimatologyModel([2.0, 0.0, 0.0, 0.0, 0.0])
    ens = small_ensemble([[2.0, 2.0]])
    anoms = ensemble.ensemble_anomalies(ens, clim)
    np.testing.assert_allclose(anoms.members, 0.0)


def test_constant_offset_survives_anomaly_conversion():
    clim = series.ClimatologyModel([2.0, 0.0, 0.0, 0.0, 0.0])
    ens = small_ensemble([[2.5, 3.5], [1.0, 4.0]])
    anoms = ensemble.ensemble_anomalies(ens, clim)
    np.testing.assert_allclose(anoms.members, ens.members - 2.0)


def test_anomaly_conversion_uses_target_day():
    clim = series.ClimatologyModel([0.0, 1.0, 0.0, 0.0, 0.0])  # cos(omega n)
    days = np.array([0, 100])
    ens = small_ensemble([[1.0, 1.0], [1.0, 1.0]], days=days)
    anoms = ensemble.ensemble_anomalies(ens, clim)
    expected = np.tile((1.0 - np.cos(series.DEFAULT_OMEGA * days))[:, None], (1, 2))
    np.testing.assert_allclose(anoms.members, expected)


# -- kernel dressing --------------------------------------------------------------


def test_dressed_prob_members_at_threshold():
    assert ensemble.dressed_exceedance_prob(np.array([1.0, 1.0, 1.0]), 0.7, 1.0) == pytest.approx(0.5)


def test_dressed_prob_symmetric_members():
    members = np.array([-2.0, -1.0, 1.0, 2.0])
    assert ensemble.dressed_exceedance_prob(members, 0.8, 0.0) == pytest.approx(0.5)


def test_dressed_prob_two_member_tail_values():
    members = np.array([-1.0, 1.0])
    assert ensemble.dressed_exceedance_prob(members, 1.0, 0.0) == pytest.approx(0.5)
    expected = 0.5 * ((1.0 - ndtr(2.0)) + 0.5)
    assert ensemble.dressed_exceedance_prob(members, 1.0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.2614, abs=1e-4)


def test_dressed_prob_monotone_in_threshold_and_bounded():
    members = np.random.default_rng(0).normal(0.0, 2.0, 15)
    taus = np.linspace(-8.0, 8.0, 33)
    probs = np.array([ensemble.dressed_exceedance_prob(members, 0.9, t) for t in taus])
    assert np.all(np.diff(probs) < 0.0)
    assert np.all((probs > 0.0) & (probs < 1.0))


def test_dressed_prob_matches_numeric_tail_integral():
    members = np.array([-1.3, -0.2, 0.4, 2.1, 3.0])
    width = 0.8
    tau = 0.9
    closed = ensemble.dressed_exceedance_prob(members, width, tau)

    def mixture_density(t):
        z = (t - members) / width
        return float(np.mean(np.exp(-0.5 * z * z)) / (width * math.sqrt(2.0 * math.pi)))

    numeric, _ = theory.integrate(mixture_density, tau, tau + 12.0)
    assert closed == pytest.approx(numeric, abs=1e-6)


def test_dressed_prob_rejects_zero_width():
    with pytest.raises(ValueError):
        ensemble.dressed_exceedance_prob(np.array([0.0, 1.0]), 0.0, 0.5)


# -- seasonal bias ------------------------------------------------------------------


def make_archive(bias_values, n_days=730, obs_noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    obs_values = rng.normal(0.0, 2.0, n_days) if obs_noise == 0.0 else rng.normal(0.0, obs_noise, n_days)
    obs = series.DailySeries(dt.date(1979, 1, 1), obs_values)
    members = obs_values[:, None] + bias_values[:, None] + np.zeros((n_days, 5))
    ens = small_ensemble(members)
    return obs, ens


def test_constant_bias_recovered():
    n_days = 730
    obs, ens = make_archive(np.full(n_days, 2.0))
    model = ensemble.fit_seasonal_bias(ens, obs, (1979, 1980))
    assert model.beta[0] == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(model.beta[1:], 0.0, atol=1e-6)


def test_cosine_bias_recovered():
    n_days = 730
    days = np.arange(n_days)
    obs, ens = make_archive(1.5 * np.cos(series.DEFAULT_OMEGA * days))
    model = ensemble.fit_seasonal_bias(ens, obs, (1979, 1980))
    assert model.beta[1] == pytest.approx(1.5, abs=1e-6)


def test_noisy_bias_within_three_standard_errors():
    n_days = 730
    days = np.arange(n_days)
    true_beta = np.array([0.5, 1.5, -0.7, 0.2, -0.1])
    curve = series.ClimatologyModel(true_beta).evaluate(days.astype(float))
    rng = np.random.default_rng(42)
    obs = series.DailySeries(dt.date(1979, 1, 1), rng.normal(0.0, 2.0, n_days))
    noise_sd = 0.8
    members = obs.values[:, None] + curve[:, None] + rng.normal(0.0, noise_sd, (n_days, 5))
    ens = small_ensemble(members)
    model = ensemble.fit_seasonal_bias(ens, obs, (1979, 1980))
    design = np.column_stack(
        [np.ones(n_days)]
        + [f(h * series.DEFAULT_OMEGA * days) for h in (1, 2) for f in (np.cos, np.sin)]
    )
    se = np.sqrt(np.diag((noise_sd**2 / 5) * np.linalg.inv(design.T @ design)))
    assert np.all(np.abs(model.beta - true_beta) <= 3.0 * se)


def test_bias_fit_needs_overlap():
    obs, ens = make_archive(np.zeros(730))
    with pytest.raises(InsufficientDataError):
        ensemble.fit_seasonal_bias(ens, obs, (1990, 1991))


def test_zero_bias_correction_is_identity():
    _, ens = make_archive(np.zeros(730))
    model = ensemble.BiasModel(beta=np.zeros(5))
    corrected = ensemble.apply_bias_correction(ens, model)
    np.testing.assert_array_equal(corrected.members, ens.members)


def test_constant_bias_correction_shifts_members():
    _, ens = make_archive(np.zeros(730))
    model = ensemble.BiasModel(beta=np.array([2.0, 0.0, 0.0, 0.0, 0.0]))
    corrected = ensemble.apply_bias_correction(ens, model)
    np.testing.assert_allclose(corrected.members, ens.members - 2.0)


def test_bias_correction_preserves_member_variance():
    truth, ens = ensemble.synthetic_archive(730, bias_amplitude=3.0, seed=7)
    model = ensemble.fit_seasonal_bias(ens, truth, (1979, 1980))
    corrected = ensemble.apply_bias_correction(ens, model)
    before = ens.members.var(axis=1, ddof=1)
    after = corrected.members.var(axis=1, ddof=1)
    # a pure translation; equal up to one floating-point rounding step
    np.testing.assert_allclose(after, before, rtol=1e-14, atol=0.0)


# -- kernel inflation -----------------------------------------------------------------


def test_wang_width_direct_arithmetic():
    assert ensemble.wang_kernel_width(2.0, 1.0, 15) == pytest.approx(2.0 - 16.0 / 15.0, abs=1e-12)


def test_wang_width_floors_perfectly_dispersed_ensembles():
    with pytest.warns(UserWarning, match="floor"):
        value = ensemble.wang_kernel_width((1.0 + 1.0 / 15.0) * 1.0, 1.0, 15)
    assert value == ensemble.KERNEL_VARIANCE_FLOOR


def test_wang_width_zero_spread_returns_mean_error_power():
    assert ensemble.wang_kernel_width(2.0, 0.0, 15) == pytest.approx(2.0)


def test_inflation_stats_on_synthetic_archive():
    truth, ens = ensemble.synthetic_archive(
        3650, dispersion_factor=0.5, error_sd=1.5, seed=11
    )
    stats = ensemble.compute_inflation_stats(ens, truth)
    spread = 0.5 * 1.5
    expected_d2 = 1.5**2 + spread**2 / 15.0
    assert stats.d2bar == pytest.approx(expected_d2, rel=0.06)
    assert stats.s2bar == pytest.approx(spread**2, rel=0.06)
    expected_sigma_k2 = expected_d2 - (1.0 + 1.0 / 15.0) * spread**2
    assert stats.sigma_k2 == pytest.approx(expected_sigma_k2, rel=0.1)


# -- forecast pipelines ----------------------------------------------------------------


def test_postprocessing_skipped_without_two_prior_years():
    truth, ens = ensemble.synthetic_archive(730, seed=1)  # 1979-1980 only
    with pytest.raises(MissingCalibrationError):
        ensemble.postprocessed_forecast(ens, truth, ZERO_CLIM, 1980, tau=1.0)


def test_well_dispersed_archive_post_close_to_raw():
    # dispersion 0.85 makes the matched-moments width coincide with the
    # rule-of-thumb width, so the two pipelines should nearly agree
    truth, ens = ensemble.synthetic_archive(
        3 * 365, bias_amplitude=0.0, dispersion_factor=0.85, error_sd=1.5, seed=5
    )
    raw = ensemble.raw_forecast(ens, ZERO_CLIM, tau=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        post = ensemble.postprocessed_forecast(ens, truth, ZERO_CLIM, 1981, tau=0.0)
    diffs = [abs(raw[d] - post[d]) for d in post]
    assert np.mean(diffs) < 0.02


def test_biased_archive_post_beats_raw():
    truth, ens = ensemble.synthetic_archive(
        3 * 365, bias_constant=3.0, dispersion_factor=0.5, error_sd=1.5, seed=6
    )
    tau = 2.0
    raw = ensemble.raw_forecast(ens, ZERO_CLIM, tau)
    post = ensemble.postprocessed_forecast(ens, truth, ZERO_CLIM, 1981, tau)
    t_raw = verify.trials_from_probabilities({d: raw[d] for d in post}, truth, tau)
    t_post = verify.trials_from_probabilities(post, truth, tau)
    assert verify.brier(t_post.p, t_post.x).mean() < verify.brier(t_raw.p, t_raw.x).mean()


def test_raw_forecast_handles_zero_spread_days():
    members = np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 2.0]])
    ens = small_ensemble(members)
    probs = ensemble.raw_forecast(ens, ZERO_CLIM, tau=0.5)
    assert probs[0] == 1.0  # all members above tau, point-mass fallback
    assert 0.0 < probs[1] < 1.0


def test_pipelines_respect_causality():
    truth, ens = ensemble.synthetic_archive(
        3 * 365, bias_amplitude=3.0, dispersion_factor=0.5, seed=6
    )
    tau = 2.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        base_post = ensemble.postprocessed_forecast(ens, truth, ZERO_CLIM, 1981, tau)
    base_raw = ensemble.raw_forecast(ens, ZERO_CLIM, tau)

    target_day = sorted(base_post)[50]
    years = truth.years()
    poisoned_values = np.where(years >= 1981, 1e6, truth.values)
    poisoned_obs = series.DailySeries(truth.epoch, poisoned_values)
    poisoned_members = ens.members.copy()
    poison_rows = (ens.years() == 1981) & (ens.day_index != target_day)
    poisoned_members[poison_rows] = 1e6
    poisoned_ens = ensemble.EnsembleSeries(ens.epoch, ens.day_index, poisoned_members, ens.lead_hours)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        poisoned_post = ensemble.postprocessed_forecast(poisoned_ens, poisoned_obs, ZERO_CLIM, 1981, tau)
    poisoned_raw = ensemble.raw_forecast(poisoned_ens, ZERO_CLIM, tau)
    assert poisoned_post[target_day] == base_post[target_day]
    assert poisoned_raw[target_day] == base_raw[target_day]


# -- structure and IO --------------------------------------------------------------------


def test_ensemble_requires_two_members():
    with pytest.raises(StructureError):
        small_ensemble(np.ones((3, 1)))


def test_ensemble_csv_round_trip():
    _, ens = ensemble.synthetic_archive(40, k=3, seed=2)
    buffer = io.StringIO()
    ensemble.write_ensemble_csv(ens, buffer)
    again = ensemble.load_ensemble_csv(io.StringIO(buffer.getvalue()), epoch=ens.epoch)
    np.testing.assert_array_equal(again.day_index, ens.day_index)
    np.testing.assert_array_equal(again.members, ens.members)
    assert again.lead_hours == ens.lead_hours


def test_ensemble_csv_rejects_varying_member_count():
    text = (
        "target_date,lead_hours,member_index,t2m_celsius\n"
        "1979-01-01,36,0,1.0\n1979-01-01,36,1,2.0\n"
        "1979-01-02,36,0,1.0\n"
    )
    with pytest.raises(StructureError):
        ensemble.load_ensemble_csv(io.StringIO(text), epoch=dt.date(1979, 1, 1))
