"""Ensemble forecasts: kernel dressing, seasonal bias correction, variance inflation.

The raw scheme dresses each member with a Gaussian kernel whose width follows
the rule-of-thumb bandwidth from the per-day member spread.  The
post-processed scheme removes a seasonally varying mean bias and replaces the
kernel width by the second-moment-matching width estimated on a calibration
window, always taken from the two calendar years preceding the forecast year.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .ar import simulate_ar1
from .errors import InsufficientDataError, MissingCalibrationError, ParseError, StructureError
from .series import (
    DEFAULT_OMEGA,
    ClimatologyModel,
    DailySeries,
    compute_anomalies,
    fit_climatology,
    silverman_width,
)

__all__ = [
    "GridSpec",
    "nearest_grid_point",
    "EnsembleSeries",
    "load_ensemble_csv",
    "write_ensemble_csv",
    "ensemble_anomalies",
    "silverman_width",
    "dressed_exceedance_prob",
    "BiasModel",
    "fit_seasonal_bias",
    "apply_bias_correction",
    "InflationStats",
    "wang_kernel_width",
    "compute_inflation_stats",
    "raw_forecast",
    "postprocessed_forecast",
    "synthetic_archive",
]

# Kernel variance floor for overdispersive calibration windows, (0.05 degC)^2.
KERNEL_VARIANCE_FLOOR = 0.05**2

# Paired days required per calibration year before post-processing is attempted.
MIN_CALIBRATION_DAYS = 180


@dataclass(frozen=True)
class GridSpec:
    """Regular lat/lon grid: origin node, spacing, and node counts per axis."""

    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int

    def coords(self, i: int, j: int) -> tuple[float, float]:
        return (self.lat0 + i * self.dlat, self.lon0 + j * self.dlon)


def _nearest_index(x: float, x0: float, dx: float, n: int) -> int:
    k = (x - x0) / dx
    lo = math.floor(k)
    idx = int(lo) if (k - lo) <= 0.5 else int(lo) + 1  # exact midpoint goes to the lower index
    return min(max(idx, 0), n - 1)


def nearest_grid_point(lat: float, lon: float, grid: GridSpec) -> tuple[int, int]:
    """Index of the grid node nearest in each axis; midpoint ties take the lower index."""
    return (
        _nearest_index(lat, grid.lat0, grid.dlat, grid.nlat),
        _nearest_index(lon, grid.lon0, grid.dlon, grid.nlon),
    )


@dataclass(frozen=True)
class EnsembleSeries:
    """K-member forecasts per target day, at one fixed lead time.

    ``members[i]`` holds the K forecast values valid on day
    ``epoch + day_index[i]``; member order carries no meaning.  Forecasts were
    initialised ``lead_hours`` before the target time.
    """

    epoch: dt.date
    day_index: np.ndarray
    members: np.ndarray
    lead_hours: float = 36.0

    def __post_init__(self):
        idx = np.array(self.day_index, dtype=int)
        mem = np.array(self.members, dtype=float)
        if idx.ndim != 1 or mem.ndim != 2 or mem.shape[0] != idx.size:
            raise StructureError("day_index must be 1-d and members (n_days, K)")
        if mem.shape[1] < 2:
            raise StructureError("an ensemble needs at least two members")
        if idx.size == 0:
            raise StructureError("empty ensemble series")
        if np.any(np.diff(idx) <= 0):
            raise StructureError("ensemble day indices must be strictly increasing")
        if not np.all(np.isfinite(mem)):
            raise StructureError("ensemble members must be finite")
        idx.setflags(write=False)
        mem.setflags(write=False)
        object.__setattr__(self, "day_index", idx)
        object.__setattr__(self, "members", mem)

    def __len__(self):
        return self.day_index.size

    @property
    def k(self) -> int:
        return self.members.shape[1]

    def dates(self) -> np.ndarray:
        return np.datetime64(self.epoch, "D") + self.day_index

    def years(self) -> np.ndarray:
        return self.dates().astype("datetime64[Y]").astype(int) + 1970

    def restrict(self, mask: np.ndarray) -> "EnsembleSeries":
        return EnsembleSeries(self.epoch, self.day_index[mask], self.members[mask], self.lead_hours)

    def restrict_years(self, start_year: int, end_year: int) -> "EnsembleSeries":
        years = self.years()
        return self.restrict((years >= start_year) & (years <= end_year))


def load_ensemble_csv(source, epoch: dt.date, *, delimiter: str = ",") -> EnsembleSeries:
    """Read ``target_date,lead_hours,member_index,t2m_celsius`` rows (one per member-day).

    Day indices are taken relative to ``epoch`` so the archive aligns with the
    observation series.  Member counts and lead time must be constant.
    """
    if isinstance(source, (str, Path)):
        handle = open(source, "r", encoding="utf-8-sig")
        own = True
    else:
        handle = source
        own = False
    per_day: dict[int, dict[int, float]] = {}
    lead = None
    try:
        reader = csv.reader(handle, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if not row or not any(c.strip() for c in row):
                continue
            if lineno == 1 and not row[0][:1].isdigit():
                continue  # header
            if len(row) < 4:
                raise ParseError(f"line {lineno}: expected 4 columns")
            try:
                day = (dt.date.fromisoformat(row[0].strip()) - epoch).days
                row_lead = float(row[1])
                member = int(row[2])
                value = float(row[3])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad ensemble row {row!r}") from exc
            if lead is None:
                lead = row_lead
            elif row_lead != lead:
                raise StructureError(f"line {lineno}: lead time changes from {lead} to {row_lead}")
            members = per_day.setdefault(day, {})
            if member in members:
                raise StructureError(f"line {lineno}: duplicate member {member} on {row[0]}")
            members[member] = value
    finally:
        if own:
            handle.close()
    if not per_day:
        raise ParseError("no ensemble rows found")

    days = sorted(per_day)
    sizes = {len(per_day[d]) for d in days}
    if len(sizes) != 1:
        raise StructureError(f"member count varies across days: {sorted(sizes)}")
    members = np.array([[per_day[d][m] for m in sorted(per_day[d])] for d in days])
    return EnsembleSeries(epoch, np.array(days), members, lead_hours=float(lead))


def write_ensemble_csv(ens: EnsembleSeries, dest) -> None:
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["target_date", "lead_hours", "member_index", "t2m_celsius"])
        dates = ens.dates().astype(str)
        for i in range(len(ens)):
            for m in range(ens.k):
                writer.writerow([dates[i], repr(float(ens.lead_hours)), m, repr(float(ens.members[i, m]))])
    finally:
        if own:
            handle.close()


def ensemble_anomalies(ens: EnsembleSeries, clim: ClimatologyModel) -> EnsembleSeries:
    """Subtract the target day's climatology from every member."""
    seasonal = clim.evaluate(ens.day_index.astype(float))
    return EnsembleSeries(ens.epoch, ens.day_index, ens.members - seasonal[:, None], ens.lead_hours)


def dressed_exceedance_prob(members, kernel_width: float, tau: float):
    """Tail mass of the Gaussian-dressed ensemble above ``tau``.

    The dressed density is the equal-weight mixture of Gaussians centred on
    the members, so the exceedance probability is the exact mixture tail,
    with no grid discretisation.  ``members`` may be one day ``(K,)`` or a
    stack ``(n, K)`` (then ``kernel_width`` may be per-day).
    """
    m = np.asarray(members, dtype=float)
    width = np.asarray(kernel_width, dtype=float)
    if np.any(width <= 0.0):
        raise ValueError("kernel width must be positive")
    if m.ndim == 1:
        return float(ndtr((m - tau) / width).mean())
    return ndtr((m - tau) / width[..., None]).mean(axis=1)


@dataclass(frozen=True)
class BiasModel:
    """Seasonal forecast bias as a harmonic curve, with its calibration window."""

    beta: np.ndarray
    omega: float = DEFAULT_OMEGA
    window: tuple[int, int] | None = None

    def __post_init__(self):
        arr = np.array(self.beta, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "beta", arr)

    def evaluate(self, n):
        return ClimatologyModel(self.beta, self.omega).evaluate(n)


def fit_seasonal_bias(ens: EnsembleSeries, obs: DailySeries, window: tuple[int, int]) -> BiasModel:
    """Harmonic fit to the daily ensemble-mean-minus-verification over a year window.

    ``ens`` and ``obs`` must live in the same space (both raw or both
    anomalies); the fitted curve is identical either way when the same
    climatology was removed from both sides.

    Raises
    ------
    InsufficientDataError
        Fewer than 180 overlapping days in the window.
    """
    in_window = (ens.years() >= window[0]) & (ens.years() <= window[1])
    days = ens.day_index[in_window]
    valid = (days < len(obs)) & obs.present[np.minimum(days, len(obs) - 1)]
    days = days[valid]
    if days.size < MIN_CALIBRATION_DAYS:
        raise InsufficientDataError(
            f"only {days.size} overlapping ensemble/observation days in {window}; need {MIN_CALIBRATION_DAYS}"
        )
    bias = ens.members[in_window][valid].mean(axis=1) - obs.values[days]
    bias_series = DailySeries.from_pairs(obs.epoch, days, bias, n_days=len(obs))
    fit = fit_climatology(bias_series, harmonics=2, omega=DEFAULT_OMEGA, window=window)
    return BiasModel(beta=fit.beta, omega=fit.omega, window=window)


def apply_bias_correction(ens: EnsembleSeries, bias: BiasModel) -> EnsembleSeries:
    """Shift every member by minus the seasonal bias of its target day.

    A per-day translation: the ensemble mean moves, the spread is untouched.
    """
    shift = bias.evaluate(ens.day_index.astype(float))
    return EnsembleSeries(ens.epoch, ens.day_index, ens.members - shift[:, None], ens.lead_hours)


@dataclass(frozen=True)
class InflationStats:
    """Second moments behind the inflated kernel width.

    ``d2bar`` is the mean squared ensemble-mean error, ``s2bar`` the mean
    ensemble variance (ddof=1), both in (degC)^2, and ``sigma_k2`` the
    resulting kernel variance.
    """

    d2bar: float
    s2bar: float
    k: int
    sigma_k2: float

    def __post_init__(self):
        if self.d2bar < 0.0 or self.s2bar < 0.0:
            raise ValueError("second moments must be non-negative")
        if self.sigma_k2 < KERNEL_VARIANCE_FLOOR:
            raise ValueError("sigma_k2 below the kernel variance floor")


def wang_kernel_width(d2bar: float, s2bar: float, k: int, *, floor: float = KERNEL_VARIANCE_FLOOR) -> float:
    """Kernel variance ``d2bar - (1 + 1/K) s2bar`` from second-moment matching.

    A perfectly dispersed ensemble drives the expression to zero and an
    overdispersive one below zero; values under ``floor`` are clamped there
    with a warning.
    """
    raw = d2bar - (1.0 + 1.0 / k) * s2bar
    if raw < floor:
        warnings.warn(
            f"inflated kernel variance {raw:.4g} is below the floor {floor:.4g}; clamping",
            UserWarning,
            stacklevel=2,
        )
        return floor
    return float(raw)


def compute_inflation_stats(ens: EnsembleSeries, obs: DailySeries) -> InflationStats:
    """Second moments of a calibration window: mean-error power and member spread."""
    days = ens.day_index
    valid = (days < len(obs)) & obs.present[np.minimum(days, len(obs) - 1)]
    if int(valid.sum()) == 0:
        raise InsufficientDataError("no paired ensemble/observation days for inflation statistics")
    members = ens.members[valid]
    truth = obs.values[days[valid]]
    d2bar = float(np.mean((members.mean(axis=1) - truth) ** 2))
    s2bar = float(np.mean(members.var(axis=1, ddof=1)))
    sigma_k2 = wang_kernel_width(d2bar, s2bar, ens.k)
    return InflationStats(d2bar=d2bar, s2bar=s2bar, k=ens.k, sigma_k2=sigma_k2)


def raw_forecast(ens: EnsembleSeries, clim: ClimatologyModel, tau: float) -> dict[int, float]:
    """Per-target-day exceedance probabilities from the uncalibrated ensemble.

    Members are converted to anomalies, dressed with the rule-of-thumb width
    recomputed from each day's member spread, and the mixture tail above
    ``tau`` is returned keyed by target day index.  A day with zero spread
    degenerates to the member indicator fraction.
    """
    anoms = ensemble_anomalies(ens, clim)
    spread = anoms.members.std(axis=1, ddof=1)
    probs = np.empty(len(anoms))
    positive = spread > 0.0
    if np.any(positive):
        widths = spread[positive] * (4.0 / (3.0 * anoms.k)) ** 0.2
        probs[positive] = dressed_exceedance_prob(anoms.members[positive], widths, tau)
    if np.any(~positive):
        probs[~positive] = (anoms.members[~positive] > tau).mean(axis=1)
    return {int(d): float(p) for d, p in zip(anoms.day_index, probs)}


def postprocessed_forecast(
    ens: EnsembleSeries,
    obs: DailySeries,
    clim: ClimatologyModel,
    target_year: int,
    tau: float,
) -> dict[int, float]:
    """Bias-corrected, dispersion-inflated exceedance probabilities for one year.

    The seasonal bias curve and the inflated kernel width are estimated from
    the two calendar years preceding ``target_year`` only, so no value dated
    inside the forecast year enters its own calibration.

    Raises
    ------
    MissingCalibrationError
        Either preceding year lacks sufficient paired ensemble/observation
        days, mirroring the enforced start two years into any archive.
    """
    window = (target_year - 2, target_year - 1)
    ens_anom = ensemble_anomalies(ens, clim)
    obs_anom = compute_anomalies(obs, clim)

    ens_years = ens_anom.years()
    for year in range(window[0], window[1] + 1):
        days = ens_anom.day_index[ens_years == year]
        paired = int(np.count_nonzero(obs_anom.present[days[days < len(obs_anom)]])) if days.size else 0
        if paired < MIN_CALIBRATION_DAYS:
            raise MissingCalibrationError(
                f"calibration year {year} has {paired} paired days; "
                f"need {MIN_CALIBRATION_DAYS} to post-process {target_year}"
            )

    bias = fit_seasonal_bias(ens_anom, obs_anom, window)
    calib = apply_bias_correction(ens_anom.restrict_years(*window), bias)
    stats = compute_inflation_stats(calib, obs_anom)
    kernel_width = math.sqrt(stats.sigma_k2)

    target = ens_anom.restrict_years(target_year, target_year)
    if len(target) == 0:
        raise MissingCalibrationError(f"no ensemble days in target year {target_year}")
    corrected = apply_bias_correction(target, bias)
    probs = dressed_exceedance_prob(corrected.members, np.full(len(corrected), kernel_width), tau)
    return {int(d): float(p) for d, p in zip(corrected.day_index, probs)}


def synthetic_archive(
    n_days: int,
    *,
    k: int = 15,
    alpha: float = 0.72,
    sigma: float = 3.06,
    bias_constant: float = 0.0,
    bias_amplitude: float = 0.0,
    dispersion_factor: float = 1.0,
    error_sd: float = 1.5,
    lead_hours: float = 36.0,
    epoch: dt.date = dt.date(1979, 1, 1),
    omega: float = DEFAULT_OMEGA,
    seed=None,
) -> tuple[DailySeries, EnsembleSeries]:
    """Paired synthetic truth and ensemble archive with controllable model errors.

    Truth anomalies follow an AR(1).  Members for a target day are the truth
    plus a seasonal bias ``bias_constant + bias_amplitude cos(omega n)``, a
    shared forecast error of spread ``error_sd``, and member perturbations of
    spread ``dispersion_factor * error_sd`` (1.0 gives a perfectly dispersed
    ensemble, below 1.0 an underdispersive one).
    """
    seq = np.random.SeedSequence(seed)
    truth_seed, noise_seed = seq.spawn(2)
    truth = simulate_ar1(alpha, sigma, n_days, seed=truth_seed, epoch=epoch)
    rng = np.random.default_rng(noise_seed)
    days = np.arange(n_days)
    bias = bias_constant + bias_amplitude * np.cos(omega * days)
    shared = rng.normal(0.0, error_sd, n_days)
    perturbations = rng.normal(0.0, dispersion_factor * error_sd, (n_days, k))
    members = truth.values[:, None] + (bias + shared)[:, None] + perturbations
    return truth, EnsembleSeries(epoch, days, members, lead_hours=lead_hours)
