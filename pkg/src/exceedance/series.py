"""Daily observation series, seasonal climatology, anomalies, and density tools.

A series is stored dense: element ``i`` holds the value for the calendar day
``epoch + i`` and ``NaN`` marks an absent observation.  Fits and statistics
skip absent entries; nothing is ever interpolated.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateDataError,
    InsufficientDataError,
    ParseError,
    SingularFitError,
    StructureError,
)

__all__ = [
    "DAYS_PER_YEAR",
    "DEFAULT_OMEGA",
    "DailySeries",
    "AnomalySeries",
    "ClimatologyModel",
    "DensityEstimate",
    "load_daily_series",
    "read_series_csv",
    "write_series_csv",
    "fit_climatology",
    "evaluate_climatology",
    "compute_anomalies",
    "autocorrelation",
    "silverman_width",
    "kde_density",
]

DAYS_PER_YEAR = 365.2425
DEFAULT_OMEGA = 2.0 * math.pi / DAYS_PER_YEAR

# Condition number above which the harmonic normal equations are rejected.
_MAX_CONDITION = 1e12


def _as_readonly(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DailySeries:
    """Daily scalar values (temperatures or anomalies, degC) since ``epoch``.

    ``values[i]`` belongs to calendar day ``epoch + i`` days; NaN marks an
    absent day.  Instances are immutable and safe to share across threads.
    """

    epoch: dt.date
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise StructureError("a daily series needs a one-dimensional, non-empty value array")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size

    @property
    def present(self) -> np.ndarray:
        """Boolean mask of days with an observation."""
        return ~np.isnan(self.values)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())

    @property
    def day_index(self) -> np.ndarray:
        return np.arange(self.values.size)

    def dates(self) -> np.ndarray:
        """Calendar dates of every index as ``datetime64[D]``."""
        return np.datetime64(self.epoch, "D") + np.arange(self.values.size)

    def years(self) -> np.ndarray:
        """Calendar year of every index."""
        return self.dates().astype("datetime64[Y]").astype(int) + 1970

    def date_of(self, n: int) -> dt.date:
        return self.epoch + dt.timedelta(days=int(n))

    def mask_years(self, start_year: int, end_year: int) -> "DailySeries":
        """Copy with values outside ``[start_year, end_year]`` marked absent."""
        years = self.years()
        vals = np.where((years >= start_year) & (years <= end_year), self.values, np.nan)
        return DailySeries(self.epoch, vals)

    @classmethod
    def from_pairs(cls, epoch: dt.date, day_index, values, n_days: int | None = None) -> "DailySeries":
        """Build a dense series from sparse ``(day_index, value)`` pairs."""
        idx = np.asarray(day_index, dtype=int)
        val = np.asarray(values, dtype=float)
        if idx.size != val.size:
            raise StructureError("day_index and values must have equal length")
        if idx.size == 0:
            raise StructureError("cannot build a series from zero pairs")
        if idx.min() < 0:
            raise StructureError("negative day index")
        size = int(idx.max()) + 1 if n_days is None else int(n_days)
        dense = np.full(size, np.nan)
        dense[idx] = val
        return cls(epoch, dense)


# Anomaly series share the representation of the raw observations.
AnomalySeries = DailySeries


@dataclass(frozen=True)
class ClimatologyModel:
    """Harmonic seasonal-cycle coefficients.

    ``beta`` is ordered ``[const, cos w, sin w, cos 2w, sin 2w, ...]`` in degC
    and ``omega`` is the angular frequency in rad/day.
    """

    beta: np.ndarray
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        arr = np.array(self.beta, dtype=float)
        if arr.ndim != 1 or arr.size < 3 or arr.size % 2 == 0:
            raise ValueError("beta must hold a constant plus cos/sin pairs")
        if not np.all(np.isfinite(arr)):
            raise ValueError("beta must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "beta", arr)

    @property
    def harmonics(self) -> int:
        return (self.beta.size - 1) // 2

    def evaluate(self, n):
        """Seasonal expectation c_n at (possibly fractional) day index ``n``."""
        t = np.asarray(n, dtype=float)
        out = np.full(t.shape, self.beta[0])
        for h in range(1, self.harmonics + 1):
            phase = h * self.omega * t
            out = out + self.beta[2 * h - 1] * np.cos(phase) + self.beta[2 * h] * np.sin(phase)
        if np.ndim(n) == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class DensityEstimate:
    """Kernel density evaluated on a grid: ``grid`` in degC, ``density`` per degC."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def __post_init__(self):
        object.__setattr__(self, "grid", _as_readonly(self.grid))
        object.__setattr__(self, "density", _as_readonly(self.density))


# -- ingestion -----------------------------------------------------------

_MINUS_VARIANTS = str.maketrans({"−": "-", "–": "-"})


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8-sig"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8")), True
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data), True
    raise ParseError(f"unsupported source type {type(source)!r}")


def _parse_date(cell: str) -> dt.date:
    return dt.date.fromisoformat(cell.strip())


def load_daily_series(
    source,
    *,
    date_column: str = "date",
    value_column: str = "t2m_celsius",
    delimiter: str = ",",
) -> DailySeries:
    """Read a delimited text file of daily observations into a dense series.

    The file holds one row per day with an ISO-8601 date and a value column;
    a header row is optional.  Missing rows become absent days (the day index
    is preserved), an empty value field also marks the day absent.

    Raises
    ------
    ParseError
        A row cannot be parsed; the message names the offending line.
    StructureError
        Duplicate or non-monotone dates.
    """
    handle, close = _open_text(source)
    try:
        reader = csv.reader(handle, delimiter=delimiter)
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=1) if row and any(c.strip() for c in row)]
    finally:
        if close:
            handle.close()
    if not rows:
        raise ParseError("no data rows found")

    date_idx, value_idx = 0, 1
    first_line, first_row = rows[0]
    try:
        _parse_date(first_row[0])
    except (ValueError, IndexError):
        header = [c.strip().lower() for c in first_row]
        if date_column.lower() not in header or value_column.lower() not in header:
            raise ParseError(
                f"line {first_line}: expected a date or a header with "
                f"columns {date_column!r} and {value_column!r}"
            )
        date_idx = header.index(date_column.lower())
        value_idx = header.index(value_column.lower())
        rows = rows[1:]
        if not rows:
            raise ParseError("no data rows after header")

    dates = []
    values = []
    for lineno, row in rows:
        if len(row) <= max(date_idx, value_idx):
            raise ParseError(f"line {lineno}: expected at least {max(date_idx, value_idx) + 1} columns")
        try:
            day = _parse_date(row[date_idx])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad date {row[date_idx]!r}") from exc
        cell = row[value_idx].strip().translate(_MINUS_VARIANTS)
        if cell == "" or cell.lower() in {"na", "nan"}:
            value = np.nan
        else:
            try:
                value = float(cell)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad value {row[value_idx]!r}") from exc
        if dates:
            if day == dates[-1][1]:
                raise StructureError(f"line {lineno}: duplicate date {day.isoformat()}")
            if day < dates[-1][1]:
                raise StructureError(f"line {lineno}: date {day.isoformat()} goes backwards")
        dates.append((lineno, day))
        values.append(value)

    epoch = dates[0][1]
    n_days = (dates[-1][1] - epoch).days + 1
    dense = np.full(n_days, np.nan)
    for (_, day), value in zip(dates, values):
        dense[(day - epoch).days] = value
    return DailySeries(epoch, dense)


def write_series_csv(series: DailySeries, dest) -> None:
    """Emit ``day_index,date,value`` rows; absent days keep an empty value field."""
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["day_index", "date", "value"])
        dates = series.dates().astype(str)
        for i, value in enumerate(series.values):
            writer.writerow([i, dates[i], "" if math.isnan(value) else repr(float(value))])
    finally:
        if own:
            handle.close()


def read_series_csv(source) -> DailySeries:
    """Read a ``day_index,date,value`` file written by :func:`write_series_csv`."""
    handle, close = _open_text(source)
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty series file")
        idx = []
        dates = []
        vals = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                idx.append(int(row[0]))
                dates.append(_parse_date(row[1]))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"line {lineno}: bad series row {row!r}") from exc
            cell = row[2].strip() if len(row) > 2 else ""
            vals.append(float(cell) if cell else np.nan)
    finally:
        if close:
            handle.close()
    if not idx:
        raise ParseError("no data rows in series file")
    epoch = dates[0] - dt.timedelta(days=idx[0])
    return DailySeries.from_pairs(epoch, idx, vals, n_days=max(idx) + 1)


# -- climatology ----------------------------------------------------------


def _design_matrix(t: np.ndarray, harmonics: int, omega: float) -> np.ndarray:
    cols = [np.ones_like(t)]
    for h in range(1, harmonics + 1):
        cols.append(np.cos(h * omega * t))
        cols.append(np.sin(h * omega * t))
    return np.column_stack(cols)


def fit_climatology(
    series: DailySeries,
    harmonics: int = 2,
    *,
    omega: float = DEFAULT_OMEGA,
    window: tuple[int, int] | None = None,
) -> ClimatologyModel:
    """Least-squares fit of the harmonic seasonal cycle to present values.

    Parameters
    ----------
    series : DailySeries
        Observations; absent days are skipped.
    harmonics : int
        Number of annual harmonics (2 fits constant + annual + semiannual).
    window : (start_year, end_year), optional
        Restrict the fit to these calendar years.

    The solution minimises the sum of squared residuals via the normal
    equations with a Cholesky factorisation; fits with span below two years
    trigger a warning, rank-deficient designs raise :class:`SingularFitError`.
    """
    if harmonics < 1:
        raise ValueError("harmonics must be >= 1")
    data = series if window is None else series.mask_years(*window)
    mask = data.present
    n_params = 2 * harmonics + 1
    if int(mask.sum()) < 2 * n_params:
        raise InsufficientDataError(
            f"need at least {2 * n_params} present values to fit {n_params} coefficients"
        )
    t = data.day_index[mask].astype(float)
    y = data.values[mask]
    if (t.max() - t.min() + 1.0) < 2.0 * 365.0:
        warnings.warn("climatology fit window is shorter than two years", UserWarning, stacklevel=2)

    design = _design_matrix(t, harmonics, omega)
    normal = design.T @ design
    rhs = design.T @ y
    cond = float(np.linalg.cond(normal))
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise SingularFitError(f"harmonic design is ill-conditioned (cond={cond:.3g})")
    try:
        factor = linalg.cho_factor(normal)
    except linalg.LinAlgError as exc:
        raise SingularFitError("harmonic design is rank deficient") from exc
    beta = linalg.cho_solve(factor, rhs)
    return ClimatologyModel(beta=beta, omega=omega)


def evaluate_climatology(model: ClimatologyModel, n):
    """Seasonal expectation c_n at day index ``n`` (scalar or array)."""
    return model.evaluate(n)


def compute_anomalies(series: DailySeries, model: ClimatologyModel) -> AnomalySeries:
    """Subtract the climatology pointwise; absent days stay absent."""
    return DailySeries(series.epoch, series.values - model.evaluate(series.day_index))


# -- descriptive statistics ------------------------------------------------


def _longest_present_run(mask: np.ndarray) -> int:
    longest = run = 0
    for flag in mask:
        run = run + 1 if flag else 0
        longest = max(longest, run)
    return longest


def autocorrelation(anoms: AnomalySeries, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag``.

    Uses the biased (1/N) normalisation, which keeps every value in [-1, 1];
    pairs that span an absent day are excluded from the lag sums.
    """
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    mask = anoms.present
    if _longest_present_run(mask) < max_lag + 2:
        raise InsufficientDataError(f"need {max_lag + 2} contiguous present values for lag {max_lag}")
    n_present = int(mask.sum())
    centred = np.where(mask, anoms.values - anoms.values[mask].mean(), 0.0)
    c0 = float(centred @ centred) / n_present
    if c0 == 0.0:
        raise DegenerateDataError("zero-variance series has undefined autocorrelation")
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = float(centred[k:] @ centred[:-k]) / (n_present * c0)
    return acf


def silverman_width(sample_sd: float, count: int) -> float:
    """Rule-of-thumb Gaussian kernel width ``(4 sd^5 / (3 count))^(1/5)``."""
    if count < 2:
        raise ValueError("kernel width needs at least two samples")
    if sample_sd < 0:
        raise ValueError("sample_sd must be non-negative")
    return float(sample_sd * (4.0 / (3.0 * count)) ** 0.2)


def kde_density(samples, grid=None, bandwidth: float | None = None) -> DensityEstimate:
    """Gaussian kernel density estimate of the sample distribution.

    The automatic bandwidth follows :func:`silverman_width` with the sample
    standard deviation; the default grid spans ``[min - 3h, max + 3h]`` with
    512 points.

    Raises
    ------
    DegenerateDataError
        Fewer than two samples, or zero spread, with automatic bandwidth.
    """
    s = np.asarray(samples, dtype=float).ravel()
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise DegenerateDataError("no samples for density estimation")
    if bandwidth is None:
        if s.size < 2:
            raise DegenerateDataError("automatic bandwidth needs at least two samples")
        sd = float(s.std(ddof=1))
        if sd == 0.0:
            raise DegenerateDataError("zero-spread samples give a degenerate bandwidth")
        bandwidth = silverman_width(sd, s.size)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(s.min() - 3.0 * bandwidth, s.max() + 3.0 * bandwidth, 512)
    else:
        grid = np.asarray(grid, dtype=float)

    density = np.zeros(grid.size)
    chunk = max(1, 2_000_000 // max(grid.size, 1))
    for start in range(0, s.size, chunk):
        block = s[start : start + chunk]
        z = (grid[:, None] - block[None, :]) / bandwidth
        density += np.exp(-0.5 * z * z).sum(axis=1)
    density /= s.size * bandwidth * math.sqrt(2.0 * math.pi)
    return DensityEstimate(grid=grid, density=density, bandwidth=float(bandwidth))
