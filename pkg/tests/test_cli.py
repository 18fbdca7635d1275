import json

import numpy as np
import pytest

from exceedance import cli, series
from exceedance.series import load_daily_series


def run(*args):
    return cli.main([str(a) for a in args])


def write_synthetic_obs(path, n_days=4 * 365, beta=(12.1, -9.5, -2.9, -0.6, 0.2), noise_sd=0.0, seed=0):
    model = series.ClimatologyModel(np.asarray(beta, dtype=float))
    values = model.evaluate(np.arange(n_days, dtype=float))
    if noise_sd:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sd, n_days)
    import datetime as dt

    obs = series.DailySeries(dt.date(1946, 1, 1), values)
    dates = obs.dates().astype(str)
    with open(path, "w") as handle:
        handle.write("date,t2m_celsius\n")
        for i in range(n_days):
            handle.write(f"{dates[i]},{float(values[i])!r}\n")
    return obs


# -- simulate -------------------------------------------------------------------


def test_simulate_round_trips_and_is_seed_deterministic(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        assert run("simulate", "--seed", 7, "--days", 2000, "--out", out) == 0
    bytes_a = (out_a / "observations.csv").read_bytes()
    bytes_b = (out_b / "observations.csv").read_bytes()
    assert bytes_a == bytes_b
    loaded = load_daily_series(out_a / "observations.csv")
    assert len(loaded) == 2000


def test_simulate_alpha_zero_has_no_memory(tmp_path):
    assert run("simulate", "--seed", 3, "--days", 20000, "--alpha", 0.0, "--out", tmp_path) == 0
    loaded = load_daily_series(tmp_path / "observations.csv")
    acf = series.autocorrelation(loaded, 1)
    assert abs(acf[1]) < 0.02


def test_simulate_with_biased_ensemble(tmp_path):
    assert (
        run(
            "simulate", "--seed", 5, "--days", 1200, "--with-ensemble",
            "--bias-constant", 3.0, "--out", tmp_path,
        )
        == 0
    )
    from exceedance.ensemble import load_ensemble_csv

    obs = load_daily_series(tmp_path / "observations.csv")
    ens = load_ensemble_csv(tmp_path / "ensemble.csv", epoch=obs.epoch)
    gap = ens.members.mean(axis=1) - obs.values[ens.day_index]
    assert gap.mean() == pytest.approx(3.0, abs=0.2)


def test_simulate_rejects_nonstationary_alpha(tmp_path):
    assert run("simulate", "--alpha", 1.5, "--out", tmp_path) == 2


# -- climatology -----------------------------------------------------------------


def test_climatology_recovers_generator(tmp_path):
    obs_path = tmp_path / "obs.csv"
    write_synthetic_obs(obs_path, n_days=33 * 365)
    out = tmp_path / "out"
    code = run("climatology", "--obs", obs_path, "--out", out)
    assert code == 0
    payload = json.loads((out / "climatology.json").read_text())
    np.testing.assert_allclose(payload["beta"], [12.1, -9.5, -2.9, -0.6, 0.2], atol=1e-6)
    anoms = series.read_series_csv(out / "anomalies.csv")
    assert np.nanmax(np.abs(anoms.values)) < 1e-6


def test_missing_observations_file_gives_exit_two(tmp_path, capsys):
    code = run("climatology", "--obs", tmp_path / "nope.csv", "--out", tmp_path)
    assert code == 2
    assert "error" in capsys.readouterr().err.lower()


def test_numeric_failures_give_exit_three(tmp_path, monkeypatch, capsys):
    from exceedance.errors import SingularFitError

    obs_path = tmp_path / "obs.csv"
    write_synthetic_obs(obs_path, n_days=3 * 365)

    def explode(*args, **kwargs):
        raise SingularFitError("harmonic design is rank deficient")

    monkeypatch.setattr(cli.series, "fit_climatology", explode)
    assert run("climatology", "--obs", obs_path, "--out", tmp_path / "out") == 3
    assert "numeric failure" in capsys.readouterr().err


# -- theory ------------------------------------------------------------------------


def test_theory_outputs_per_alpha(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"alphas": [0.0, 0.4, 0.72], "q_grid": [0.2, 0.5, 0.8], "out_dir": str(tmp_path / "out")}))
    assert run("theory", "--config", config) == 0
    header, rows0 = cli.read_rows(tmp_path / "out" / "theory_alpha0.csv")
    assert header == ["q", "r_tau", "brier_cebr", "brier_ar1", "bss"]
    assert all(abs(float(r[4])) < 1e-6 for r in rows0)  # no skill without correlation
    at_half = {}
    for alpha in (0.0, 0.4, 0.72):
        _, rows = cli.read_rows(tmp_path / "out" / f"theory_alpha{alpha:g}.csv")
        at_half[alpha] = float(rows[1][4])
    assert at_half[0.0] < at_half[0.4] < at_half[0.72]


# -- fit-ar -----------------------------------------------------------------------------


def test_fit_ar_emits_scan_and_model(tmp_path):
    obs_path = tmp_path / "obs.csv"
    write_synthetic_obs(obs_path, n_days=40 * 365, noise_sd=3.0, seed=1)
    out = tmp_path / "out"
    assert run("fit-ar", "--obs", obs_path, "--out", out) == 0
    header, rows = cli.read_rows(out / "ar_scan.csv")
    assert header == ["order", "aic", "sigma2"]
    assert len(rows) == 6
    payload = json.loads((out / "ar_model.json").read_text())
    assert payload["order"] == 1  # forecasts default to the first-order model


# -- evaluate / forecast ------------------------------------------------------------------


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    """Synthetic observations + biased ensemble archive, written once."""
    root = tmp_path_factory.mktemp("cli_run")
    sim_out = root / "data"
    code = cli.main(
        [
            "simulate", "--seed", "17", "--days", str(6 * 365), "--with-ensemble",
            "--bias-amplitude", "3.0", "--dispersion-factor", "0.5",
            "--out", str(sim_out),
        ]
    )
    assert code == 0
    config = {
        "observations": str(sim_out / "observations.csv"),
        "ensemble": str(sim_out / "ensemble.csv"),
        "train_years": [1946, 1948],
        "test_years": [1949, 1951],
        "q_grid": [0.3, 0.6, 0.9],
        "roc_q": [0.6],
        "n_boot": 200,
        "seed": 9,
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))
    return root, config_path


def test_evaluate_end_to_end(synthetic_run, tmp_path):
    root, config_path = synthetic_run
    out = tmp_path / "eval"
    assert run("evaluate", "--config", config_path, "--out", out) == 0
    header, rows = cli.read_rows(out / "skill.csv")
    assert header == list(__import__("exceedance.verify", fromlist=["SKILL_COLUMNS"]).SKILL_COLUMNS)
    schemes = {r[0] for r in rows}
    assert schemes == {"cebr", "ar1", "raw", "post"}
    for row in rows:
        if row[0] == "cebr":
            assert float(row[6]) == 0.0  # bss column
    assert (out / "roc_ar1_q0.6.csv").exists()
    skill = json.loads((out / "skill.json").read_text())
    assert len(skill) == len(rows)


def test_forecast_outputs(synthetic_run, tmp_path):
    root, config_path = synthetic_run
    out = tmp_path / "fc"
    assert run("forecast", "--config", config_path, "--q", 0.6, "--out", out) == 0
    header, rows = cli.read_rows(out / "forecast_data_models.csv")
    assert header == ["date", "tau", "p_cebr", "p_ar1"]
    assert rows
    p_cebr = {float(r[2]) for r in rows}
    assert len(p_cebr) == 1  # the base-rate forecast never moves
    header, rows = cli.read_rows(out / "forecast_ensemble.csv")
    assert header == ["date", "tau", "p_raw", "p_post"]
    assert rows


def test_calibrate_outputs(synthetic_run, tmp_path):
    root, config_path = synthetic_run
    out = tmp_path / "cal"
    assert run("calibrate", "--config", config_path, "--year", 1950, "--out", out) == 0
    payload = json.loads((out / "calibration_1950.json").read_text())
    assert payload["window"] == [1948, 1949]
    assert payload["sigma_k2"] > 0


def test_emitted_csvs_round_trip(synthetic_run, tmp_path):
    root, config_path = synthetic_run
    out = tmp_path / "rt"
    assert run("evaluate", "--config", config_path, "--out", out) == 0
    for path in out.glob("*.csv"):
        header, rows = cli.read_rows(path)
        resaved = tmp_path / "resaved.csv"
        cli.write_rows(resaved, header, rows)
        assert resaved.read_bytes() == path.read_bytes()


def test_config_rejects_unknown_fields(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"observations": "x.csv", "typo_field": 1}))
    assert run("theory", "--config", config) == 2


def test_config_rejects_overlapping_windows(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"train_years": [1946, 1980], "test_years": [1979, 2010]}))
    assert run("theory", "--config", config) == 2
