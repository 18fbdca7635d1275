"""Zero-mean autoregressive models: fitting, order scan, forecasts, simulation."""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.signal import lfilter
from scipy.special import ndtr

from .errors import DegenerateDataError, InsufficientDataError, NonstationaryError
from .series import AnomalySeries, DailySeries

__all__ = [
    "ARModel",
    "OrderSelection",
    "fit_ar",
    "stationary_sd",
    "exceedance_prob",
    "simulate_ar1",
]


@dataclass(frozen=True)
class ARModel:
    """AR(p) coefficients with residual variance; the process mean is fixed at zero.

    ``alpha`` holds the p coefficients (dimensionless), ``sigma2`` the white
    noise variance in (degC)^2.  ``source_window`` optionally records the
    calendar years the fit was taken from.
    """

    alpha: np.ndarray
    sigma2: float
    source_window: tuple[int, int] | None = None

    def __post_init__(self):
        arr = np.atleast_1d(np.array(self.alpha, dtype=float))
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("alpha must hold at least one coefficient")
        if not np.all(np.isfinite(arr)):
            raise ValueError("alpha must be finite")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if arr.size == 1 and abs(arr[0]) >= 1.0:
            raise NonstationaryError(f"|alpha|={abs(arr[0]):.4f} >= 1 gives a non-stationary AR(1)")
        arr.setflags(write=False)
        object.__setattr__(self, "alpha", arr)

    @property
    def order(self) -> int:
        return self.alpha.size

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def to_json(self, dest=None) -> str:
        payload = {
            "order": self.order,
            "alpha": [float(a) for a in self.alpha],
            "sigma2": float(self.sigma2),
            "source_window": list(self.source_window) if self.source_window else None,
        }
        text = json.dumps(payload, sort_keys=True)
        if dest is not None:
            Path(dest).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "ARModel":
        if isinstance(source, (str, Path)) and Path(str(source)).exists():
            payload = json.loads(Path(source).read_text(encoding="utf-8"))
        else:
            payload = json.loads(source)
        window = payload.get("source_window")
        return cls(
            alpha=np.asarray(payload["alpha"], dtype=float),
            sigma2=float(payload["sigma2"]),
            source_window=tuple(window) if window else None,
        )


@dataclass(frozen=True)
class OrderSelection:
    """Per-order fits with their information criterion and the minimising order."""

    candidates: tuple[tuple[int, ARModel, float], ...]
    chosen_order: int

    @property
    def chosen(self) -> ARModel:
        return self.model(self.chosen_order)

    def model(self, order: int | None = None) -> ARModel:
        order = self.chosen_order if order is None else order
        for p, model, _ in self.candidates:
            if p == order:
                return model
        raise KeyError(f"no candidate of order {order}")

    def aic(self, order: int) -> float:
        for p, _, value in self.candidates:
            if p == order:
                return value
        raise KeyError(f"no candidate of order {order}")


def _autocovariance(anoms: AnomalySeries, max_lag: int) -> tuple[np.ndarray, int, int]:
    """Biased autocovariances about zero; pairs spanning absent days drop out."""
    mask = anoms.present
    x = np.where(mask, anoms.values, 0.0)
    n_present = int(mask.sum())
    cov = np.empty(max_lag + 1)
    cov[0] = float(x @ x) / n_present
    for k in range(1, max_lag + 1):
        cov[k] = float(x[k:] @ x[:-k]) / n_present
    n_pairs = int(np.count_nonzero(mask[1:] & mask[:-1]))
    return cov, n_present, n_pairs


def fit_ar(
    anoms: AnomalySeries,
    max_order: int,
    *,
    source_window: tuple[int, int] | None = None,
) -> OrderSelection:
    """Fit AR(p) for every order up to ``max_order`` and rank them by AIC.

    Coefficients come from the Yule-Walker equations on the zero-mean
    autocovariances; ``AIC = N ln(sigma2) + 2p`` with N the usable lag-1 pair
    count, ties resolved toward the smaller order.

    Raises
    ------
    InsufficientDataError
        Fewer than ``10 * max_order`` contiguous present values.
    NonstationaryError
        The order-1 fit has ``|alpha| >= 1``.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    mask = anoms.present
    run = _longest_run(mask)
    if run < 10 * max_order:
        raise InsufficientDataError(
            f"need {10 * max_order} contiguous present values, longest run is {run}"
        )
    cov, _, n_pairs = _autocovariance(anoms, max_order)
    if cov[0] == 0.0:
        raise DegenerateDataError("zero-variance anomalies cannot be fit")

    candidates = []
    aics = []
    for p in range(1, max_order + 1):
        alpha = solve_toeplitz(cov[:p], cov[1 : p + 1])
        sigma2 = float(cov[0] - alpha @ cov[1 : p + 1])
        if sigma2 <= 0.0:
            raise DegenerateDataError(f"order-{p} fit has non-positive residual variance")
        model = ARModel(alpha=alpha, sigma2=sigma2, source_window=source_window)
        aic = n_pairs * math.log(sigma2) + 2.0 * p
        candidates.append((p, model, aic))
        aics.append(aic)
    chosen = int(np.argmin(aics)) + 1  # argmin returns the first minimum: smaller order wins ties
    return OrderSelection(candidates=tuple(candidates), chosen_order=chosen)


def _longest_run(mask: np.ndarray) -> int:
    longest = run = 0
    for flag in mask:
        run = run + 1 if flag else 0
        longest = max(longest, run)
    return longest


def stationary_sd(model: ARModel) -> float:
    """Marginal standard deviation ``sigma / sqrt(1 - alpha^2)`` of an AR(1)."""
    if model.order != 1:
        raise ValueError("stationary_sd is defined for AR(1) models only")
    alpha = float(model.alpha[0])
    return math.sqrt(model.sigma2 / (1.0 - alpha * alpha))


def exceedance_prob(model: ARModel, t_now, tau: float):
    """Probability that the next value exceeds ``tau`` given the current value.

    For an AR(1), the next value conditional on ``t_now`` is Gaussian with
    mean ``alpha * t_now`` and variance ``sigma2``; the exceedance probability
    is the upper tail of that Gaussian.  Accepts scalars or arrays.
    """
    if model.order != 1:
        raise ValueError("exceedance_prob is defined for AR(1) models only")
    alpha = float(model.alpha[0])
    p = ndtr((alpha * np.asarray(t_now, dtype=float) - tau) / model.sigma)
    if np.ndim(t_now) == 0:
        return float(p)
    return p


def simulate_ar1(
    alpha: float,
    sigma: float,
    n: int,
    seed=None,
    *,
    epoch: dt.date = dt.date(1946, 1, 1),
    init: str = "stationary",
    burn_in: int = 1000,
) -> AnomalySeries:
    """Simulate ``n`` steps of a zero-mean AR(1) with Gaussian innovations.

    ``init="stationary"`` draws the first value from N(0, sigma_C^2) so no
    burn-in is needed; ``init="burnin"`` starts at zero and discards
    ``burn_in`` warm-up steps.  Fixed ``seed`` gives a reproducible series.
    """
    if abs(alpha) >= 1.0:
        raise NonstationaryError(f"|alpha|={abs(alpha):.4f} >= 1 gives a non-stationary AR(1)")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)

    if init == "stationary":
        sigma_c = sigma / math.sqrt(1.0 - alpha * alpha)
        x0 = rng.normal(0.0, sigma_c)
        if n == 1:
            return DailySeries(epoch, np.array([x0]))
        eps = rng.normal(0.0, sigma, n - 1)
        tail, _ = lfilter([1.0], [1.0, -alpha], eps, zi=np.array([alpha * x0]))
        values = np.concatenate(([x0], tail))
    elif init == "burnin":
        if burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        eps = rng.normal(0.0, sigma, n + burn_in)
        values = lfilter([1.0], [1.0, -alpha], eps)[burn_in:]
    else:
        raise ValueError(f"unknown init mode {init!r}")
    return DailySeries(epoch, values)
