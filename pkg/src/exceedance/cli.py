"""Command-line driver wiring ingestion, fitting, forecasting, and evaluation.

Every subcommand is a batch job that reads CSV/JSON inputs and writes tidy
CSV/JSON outputs into ``--out``; plotting is left to downstream tools.  Exit
codes: 0 success, 2 unusable input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import ar, cebr, ensemble, series, theory, verify
from .errors import InputError, NumericError

__all__ = ["RunConfig", "main", "build_parser"]

_DEFAULT_Q_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclasses.dataclass
class RunConfig:
    """Run settings; every field has a default and JSON config files override them.

    ``observations`` and ``ensemble`` are paths to the corresponding CSV
    archives.  ``order=None`` lets the information criterion pick the AR
    order, an integer forces it (forecasts default to order 1).
    """

    observations: str | None = None
    ensemble: str | None = None
    out_dir: str = "out"
    seed: int = 0
    train_years: tuple[int, int] = (1946, 1978)
    test_years: tuple[int, int] = (1979, 2010)
    harmonics: int = 2
    max_order: int = 6
    order: int | None = 1
    q_grid: tuple[float, ...] = _DEFAULT_Q_GRID
    roc_q: tuple[float, ...] = (0.35, 0.95)
    forecast_q: float = 0.5
    alphas: tuple[float, ...] = (0.0, 0.4, 0.72, 0.9)
    sigma: float = 3.06
    lead_hours: float = 36.0
    block_len: int = 10
    n_boot: int = 2000
    level: float = 0.95
    target_year: int | None = None
    # synthetic data generation
    sim_days: int = 10958
    sim_alpha: float = 0.72
    sim_sigma: float = 3.06
    sim_epoch: str = "1946-01-01"
    with_ensemble: bool = False
    sim_members: int = 15
    sim_bias_constant: float = 0.0
    sim_bias_amplitude: float = 0.0
    sim_dispersion_factor: float = 1.0
    sim_error_sd: float = 1.5

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise InputError(f"config {path}: unknown fields {sorted(unknown)}")
        return cls(**payload)

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    def validated(self) -> "RunConfig":
        cfg = self.replace(
            train_years=tuple(self.train_years),
            test_years=tuple(self.test_years),
            q_grid=tuple(float(q) for q in self.q_grid),
            roc_q=tuple(float(q) for q in self.roc_q),
            alphas=tuple(float(a) for a in self.alphas),
        )
        if len(cfg.train_years) != 2 or len(cfg.test_years) != 2:
            raise InputError("train_years and test_years must be [start, end] pairs")
        if cfg.train_years[1] >= cfg.test_years[0]:
            raise InputError("the training window must precede the test window")
        for q in cfg.q_grid + cfg.roc_q + (cfg.forecast_q,):
            if not 0.0 < q < 1.0:
                raise InputError(f"quantile {q} outside (0, 1)")
        for a in cfg.alphas + (cfg.sim_alpha,):
            if not abs(a) < 1.0:
                raise InputError(f"AR parameter {a} is non-stationary")
        if cfg.sigma <= 0 or cfg.sim_sigma <= 0 or cfg.sim_error_sd <= 0:
            raise InputError("scale parameters must be positive")
        if not 0.0 < cfg.level < 1.0:
            raise InputError("level must lie in (0, 1)")
        if cfg.block_len < 1 or cfg.n_boot < 1 or cfg.sim_days < 2 or cfg.sim_members < 2:
            raise InputError("block_len, n_boot, sim_days, and sim_members must be sensible")
        if cfg.order is not None and not 1 <= cfg.order <= cfg.max_order:
            raise InputError("order must lie in [1, max_order]")
        try:
            dt.date.fromisoformat(cfg.sim_epoch)
        except ValueError as exc:
            raise InputError(f"sim_epoch: {exc}") from exc
        return cfg


# -- deterministic CSV plumbing --------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def write_rows(path, header, rows) -> None:
    """Write a CSV with repr-formatted floats so values round-trip exactly."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(cell) for cell in row) + "\n")


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    """Read back a CSV written by :func:`write_rows`."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise InputError(f"{path}: empty file")
    header = text[0].split(",")
    return header, [line.split(",") for line in text[1:] if line]


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- shared pipeline pieces --------------------------------------------------


def _load_observations(cfg: RunConfig) -> series.DailySeries:
    if not cfg.observations:
        raise InputError("an observations CSV is required (set observations or --obs)")
    return series.load_daily_series(cfg.observations)


def _fit_pipeline(cfg: RunConfig):
    obs = _load_observations(cfg)
    clim = series.fit_climatology(obs, cfg.harmonics, window=cfg.train_years)
    anoms = series.compute_anomalies(obs, clim)
    return obs, clim, anoms


def _forecast_model(cfg: RunConfig, anoms) -> ar.ARModel:
    selection = ar.fit_ar(
        anoms.mask_years(*cfg.train_years), cfg.max_order, source_window=cfg.train_years
    )
    return selection.model(cfg.order) if cfg.order is not None else selection.chosen


def _ensemble_archive(cfg: RunConfig, obs) -> ensemble.EnsembleSeries | None:
    if not cfg.ensemble:
        return None
    return ensemble.load_ensemble_csv(cfg.ensemble, obs.epoch)


def _postprocessed_probs(ens, obs, clim, years, tau) -> tuple[dict[int, float], list[str]]:
    probs: dict[int, float] = {}
    notes = []
    for year in range(years[0], years[1] + 1):
        try:
            probs.update(ensemble.postprocessed_forecast(ens, obs, clim, year, tau))
        except (InputError, NumericError) as exc:
            notes.append(f"post-processing skipped {year}: {exc}")
    return probs, notes


def _schemes(cfg: RunConfig, train_anoms, anoms, obs, clim, ens):
    """Scheme factories keyed by name; each factory takes tau."""

    def cebr_factory(tau):
        model = cebr.empirical_cebr(train_anoms, tau)
        return lambda t_now: cebr.cebr_forecast(model, t_now)

    model = _forecast_model(cfg, anoms)

    def ar_factory(tau):
        return lambda t_now: ar.exceedance_prob(model, t_now, tau)

    schemes = {"cebr": cebr_factory, "ar1": ar_factory}
    if ens is not None:
        test_years = cfg.test_years

        def raw_factory(tau):
            probs = ensemble.raw_forecast(ens, clim, tau)
            keep = set(np.nonzero(_year_mask(anoms, test_years))[0])
            return {day: p for day, p in probs.items() if day in keep}

        def post_factory(tau):
            probs, notes = _postprocessed_probs(ens, obs, clim, test_years, tau)
            for note in notes:
                print(note, file=sys.stderr)
            return probs

        schemes["raw"] = raw_factory
        schemes["post"] = post_factory
    return schemes


def _year_mask(anoms, years) -> np.ndarray:
    all_years = anoms.years()
    return (all_years >= years[0]) & (all_years <= years[1])


# -- subcommands -------------------------------------------------------------


def cmd_climatology(cfg: RunConfig) -> int:
    obs, clim, anoms = _fit_pipeline(cfg)
    out = _out_dir(cfg)
    payload = {
        "beta": [float(b) for b in clim.beta],
        "omega": clim.omega,
        "harmonics": clim.harmonics,
        "train_years": list(cfg.train_years),
    }
    (out / "climatology.json").write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    seasonal = clim.evaluate(obs.day_index.astype(float))
    dates = obs.dates().astype(str)
    write_rows(
        out / "climatology.csv",
        ["day_index", "date", "value"],
        [(i, dates[i], seasonal[i]) for i in range(len(obs))],
    )
    with open(out / "anomalies.csv", "w", encoding="utf-8", newline="") as handle:
        series.write_series_csv(anoms, handle)
    return 0


def cmd_fit_ar(cfg: RunConfig) -> int:
    _, _, anoms = _fit_pipeline(cfg)
    selection = ar.fit_ar(
        anoms.mask_years(*cfg.train_years), cfg.max_order, source_window=cfg.train_years
    )
    out = _out_dir(cfg)
    write_rows(
        out / "ar_scan.csv",
        ["order", "aic", "sigma2"],
        [(p, aic, model.sigma2) for p, model, aic in selection.candidates],
    )
    chosen = selection.model(cfg.order) if cfg.order is not None else selection.chosen
    chosen.to_json(out / "ar_model.json")
    print(
        f"aic prefers order {selection.chosen_order}; "
        f"forecast model uses order {chosen.order} (alpha1={chosen.alpha[0]:.4f})"
    )
    return 0


def cmd_theory(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    for alpha in cfg.alphas:
        rows = theory.curve(alpha, cfg.sigma, cfg.q_grid)
        write_rows(
            out / f"theory_alpha{alpha:g}.csv",
            ["q", "r_tau", "brier_cebr", "brier_ar1", "bss"],
            [(r["q"], r["r_tau"], r["brier_cebr"], r["brier_ar1"], r["bss"]) for r in rows],
        )
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    obs, clim, anoms = _fit_pipeline(cfg)
    train_anoms = anoms.mask_years(*cfg.train_years)
    tau = float(np.quantile(train_anoms.values[train_anoms.present], cfg.forecast_q))
    test_anoms = anoms.mask_years(*cfg.test_years)
    out = _out_dir(cfg)

    rate_model = cebr.empirical_cebr(train_anoms, tau)
    model = _forecast_model(cfg, anoms)
    trials = verify.build_trials(lambda t: ar.exceedance_prob(model, t, tau), test_anoms, tau)
    dates = anoms.dates().astype(str)
    rows = [
        (dates[day + 1], tau, rate_model.rate, p)  # date names the forecast target day
        for day, p in zip(trials.day, trials.p)
    ]
    write_rows(out / "forecast_data_models.csv", ["date", "tau", "p_cebr", "p_ar1"], rows)

    ens = _ensemble_archive(cfg, obs)
    if ens is not None:
        raw = ensemble.raw_forecast(ens, clim, tau)
        post, notes = _postprocessed_probs(ens, obs, clim, cfg.test_years, tau)
        for note in notes:
            print(note, file=sys.stderr)
        test_mask = set(np.nonzero(_year_mask(anoms, cfg.test_years))[0])
        rows = [
            (dates[day], tau, raw[day], post.get(day, math.nan))
            for day in sorted(set(raw) & test_mask)
        ]
        write_rows(out / "forecast_ensemble.csv", ["date", "tau", "p_raw", "p_post"], rows)
    return 0


def cmd_calibrate(cfg: RunConfig) -> int:
    if cfg.target_year is None:
        raise InputError("calibrate needs --year")
    obs, clim, _ = _fit_pipeline(cfg)
    ens = _ensemble_archive(cfg, obs)
    if ens is None:
        raise InputError("calibrate needs an ensemble archive (set ensemble or --ensemble)")
    window = (cfg.target_year - 2, cfg.target_year - 1)
    ens_anom = ensemble.ensemble_anomalies(ens, clim)
    obs_anom = series.compute_anomalies(obs, clim)
    bias = ensemble.fit_seasonal_bias(ens_anom, obs_anom, window)
    corrected = ensemble.apply_bias_correction(ens_anom.restrict_years(*window), bias)
    stats = ensemble.compute_inflation_stats(corrected, obs_anom)
    out = _out_dir(cfg)
    payload = {
        "year": cfg.target_year,
        "window": list(window),
        "bias_beta": [float(b) for b in bias.beta],
        "omega": bias.omega,
        "d2bar": stats.d2bar,
        "s2bar": stats.s2bar,
        "members": stats.k,
        "sigma_k2": stats.sigma_k2,
    }
    path = out / f"calibration_{cfg.target_year}.json"
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    obs, clim, anoms = _fit_pipeline(cfg)
    train_anoms = anoms.mask_years(*cfg.train_years)
    test_anoms = anoms.mask_years(*cfg.test_years)
    if test_anoms.n_present == 0:
        raise InputError("no observations inside the test window")
    ens = _ensemble_archive(cfg, obs)
    schemes = _schemes(cfg, train_anoms, anoms, obs, clim, ens)

    report = verify.threshold_sweep(
        schemes,
        train_anoms,
        test_anoms,
        cfg.q_grid,
        reference="cebr",
        level=cfg.level,
        block_len=cfg.block_len,
        n_boot=cfg.n_boot,
        seed=cfg.seed,
    )
    out = _out_dir(cfg)
    write_rows(
        out / "skill.csv",
        list(verify.SKILL_COLUMNS),
        [[row.as_dict()[c] for c in verify.SKILL_COLUMNS] for row in report.rows],
    )
    report.to_json(out / "skill.json")

    train_values = train_anoms.values[train_anoms.present]
    for q in cfg.roc_q:
        tau = float(np.quantile(train_values, q))
        for name, factory in schemes.items():
            trials = verify._as_trials(factory(tau), test_anoms, tau, name)
            try:
                curve = verify.roc_curve(trials)
            except (NumericError, InputError) as exc:
                print(f"roc skipped for {name} at q={q:g}: {exc}", file=sys.stderr)
                continue
            write_rows(
                out / f"roc_{name}_q{q:g}.csv",
                ["zeta", "F", "H"],
                list(zip(curve.zeta, curve.f, curve.h)),
            )
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    epoch = dt.date.fromisoformat(cfg.sim_epoch)
    if cfg.with_ensemble:
        truth, ens = ensemble.synthetic_archive(
            cfg.sim_days,
            k=cfg.sim_members,
            alpha=cfg.sim_alpha,
            sigma=cfg.sim_sigma,
            bias_constant=cfg.sim_bias_constant,
            bias_amplitude=cfg.sim_bias_amplitude,
            dispersion_factor=cfg.sim_dispersion_factor,
            error_sd=cfg.sim_error_sd,
            lead_hours=cfg.lead_hours,
            epoch=epoch,
            seed=cfg.seed,
        )
        ensemble.write_ensemble_csv(ens, out / "ensemble.csv")
    else:
        truth = ar.simulate_ar1(cfg.sim_alpha, cfg.sim_sigma, cfg.sim_days, seed=cfg.seed, epoch=epoch)
    dates = truth.dates().astype(str)
    write_rows(
        out / "observations.csv",
        ["date", "t2m_celsius"],
        [(dates[i], truth.values[i]) for i in range(len(truth))],
    )
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exceedance",
        description="Next-day threshold exceedance forecasting and verification for daily anomalies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="random seed for reproducible outputs")
        p.add_argument("--out", help="output directory")
        p.add_argument("--obs", help="observations CSV (date,t2m_celsius)")
        p.add_argument("--ensemble", help="ensemble archive CSV")

    specs = {
        "climatology": (cmd_climatology, "fit the seasonal cycle and emit anomalies"),
        "fit-ar": (cmd_fit_ar, "scan AR orders and emit the forecast model"),
        "theory": (cmd_theory, "emit theoretical rate/score/skill curves per AR parameter"),
        "forecast": (cmd_forecast, "emit per-day exceedance probabilities"),
        "calibrate": (cmd_calibrate, "fit seasonal bias and kernel inflation for one year"),
        "evaluate": (cmd_evaluate, "threshold sweep with skill and ROC statistics"),
        "simulate": (cmd_simulate, "generate synthetic observations (and optionally an ensemble)"),
    }
    for name, (func, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.set_defaults(func=func)
        if name == "forecast":
            p.add_argument("--q", type=float, help="threshold quantile for the forecast file")
        if name == "calibrate":
            p.add_argument("--year", type=int, help="target year to calibrate")
        if name == "simulate":
            p.add_argument("--alpha", type=float, help="AR parameter of the synthetic truth")
            p.add_argument("--sigma", type=float, help="innovation sd of the synthetic truth")
            p.add_argument("--days", type=int, help="number of days to simulate")
            p.add_argument("--with-ensemble", action="store_true", help="also write a synthetic ensemble")
            p.add_argument("--bias-constant", type=float, help="constant ensemble bias (degC)")
            p.add_argument("--bias-amplitude", type=float, help="seasonal ensemble bias amplitude (degC)")
            p.add_argument("--dispersion-factor", type=float, help="member spread relative to forecast error")
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    mapping = {
        "seed": "seed",
        "out": "out_dir",
        "obs": "observations",
        "ensemble": "ensemble",
        "q": "forecast_q",
        "year": "target_year",
        "alpha": "sim_alpha",
        "sigma": "sim_sigma",
        "days": "sim_days",
        "bias_constant": "sim_bias_constant",
        "bias_amplitude": "sim_bias_amplitude",
        "dispersion_factor": "sim_dispersion_factor",
    }
    for arg_name, field in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "with_ensemble", False):
        overrides["with_ensemble"] = True
    return cfg.replace(**overrides).validated()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return int(args.func(cfg) or 0)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
