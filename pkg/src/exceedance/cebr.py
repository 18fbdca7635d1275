"""Conditional exceedance base rate: the constant-probability null forecast.

An event is a next-day threshold exceedance and a day only counts as a
forecast instance when today's anomaly is at or below the threshold; the
base rate is estimated over exactly those instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoTrialsError, NotAForecastInstance
from .series import AnomalySeries

__all__ = ["CEBRModel", "empirical_cebr", "cebr_forecast"]


@dataclass(frozen=True)
class CEBRModel:
    """Constant exceedance rate for one threshold, with the trial count behind it."""

    tau: float
    rate: float
    trials_used: int

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must be a probability")
        if self.trials_used < 1:
            raise ValueError("trials_used must be >= 1")

    def to_json(self, dest=None) -> str:
        text = json.dumps(
            {"tau": float(self.tau), "rate": float(self.rate), "trials_used": self.trials_used},
            sort_keys=True,
        )
        if dest is not None:
            Path(dest).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "CEBRModel":
        if isinstance(source, (str, Path)) and Path(str(source)).exists():
            payload = json.loads(Path(source).read_text(encoding="utf-8"))
        else:
            payload = json.loads(source)
        return cls(tau=payload["tau"], rate=payload["rate"], trials_used=payload["trials_used"])


def empirical_cebr(anoms: AnomalySeries, tau: float) -> CEBRModel:
    """Estimate the conditional exceedance base rate from training anomalies.

    Counts, over consecutive present days, how often a day at or below ``tau``
    is followed by a day above it.  Pairs spanning an absent day are excluded
    from numerator and denominator alike.  Small samples may legitimately
    yield rates of exactly 0 or 1; quadratic scores handle those, logarithmic
    scores would not.

    Raises
    ------
    NoTrialsError
        No present day at or below ``tau`` is followed by a present day.
    """
    v = anoms.values
    mask = anoms.present
    paired = mask[:-1] & mask[1:]
    qualifying = paired & (v[:-1] <= tau)
    denom = int(np.count_nonzero(qualifying))
    if denom == 0:
        raise NoTrialsError(f"no day at or below tau={tau:g} is followed by an observation")
    num = int(np.count_nonzero(qualifying & (v[1:] > tau)))
    return CEBRModel(tau=float(tau), rate=num / denom, trials_used=denom)


def cebr_forecast(model: CEBRModel, t_now: float) -> float:
    """The constant rate, issued only when today's value is at or below tau."""
    if t_now > model.tau:
        raise NotAForecastInstance(f"t_now={t_now:g} is above tau={model.tau:g}; no forecast issued")
    return model.rate
