"""Forecast verification: trial building, Brier/BSS scoring, ROC and AUC statistics.

A trial exists for day ``n`` only when the anomaly is at or below the
threshold on ``n`` and observed on ``n + 1``; the outcome is the indicator of
next-day exceedance.  Skill is measured against a reference scheme with
moving-block bootstrap confidence intervals, discrimination by ROC curves
with rank-based AUC variance estimates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import (
    DegenerateTrialsError,
    InsufficientDataError,
    NotAForecastInstance,
    UndefinedSkillError,
)
from .series import AnomalySeries

__all__ = [
    "TrialSet",
    "build_trials",
    "trials_from_probabilities",
    "brier",
    "bss",
    "bss_between",
    "bss_confidence",
    "deterministic",
    "RocCurve",
    "roc_curve",
    "auc",
    "auc_delong_ci",
    "SkillRow",
    "SkillReport",
    "threshold_sweep",
]


@dataclass(frozen=True)
class TrialSet:
    """Aligned forecast/outcome pairs for one threshold.

    ``day[i]`` is the issuing day n (the forecast targets n + 1), ``p[i]`` the
    issued probability and ``x[i]`` the observed exceedance indicator.
    """

    tau: float
    day: np.ndarray
    p: np.ndarray
    x: np.ndarray
    scheme: str = ""

    def __post_init__(self):
        day = np.array(self.day, dtype=int)
        p = np.array(self.p, dtype=float)
        x = np.array(self.x, dtype=np.int8)
        if not (day.size == p.size == x.size):
            raise ValueError("day, p, and x must have equal length")
        if day.size and np.any(np.diff(day) <= 0):
            raise ValueError("trial days must be strictly increasing")
        if p.size and (np.nanmin(p) < 0.0 or np.nanmax(p) > 1.0):
            raise ValueError("forecast probabilities must lie in [0, 1]")
        if x.size and not np.all((x == 0) | (x == 1)):
            raise ValueError("outcomes must be 0 or 1")
        for name, arr in (("day", day), ("p", p), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.day.size

    @property
    def n_events(self) -> int:
        return int(self.x.sum())


def _trial_days(anoms: AnomalySeries, tau: float) -> np.ndarray:
    v = anoms.values
    mask = anoms.present
    gate = mask[:-1] & mask[1:] & (v[:-1] <= tau)
    return np.nonzero(gate)[0]


def build_trials(forecaster: Callable, anoms: AnomalySeries, tau: float, scheme: str = "") -> TrialSet:
    """Issue one trial per qualifying day using ``forecaster(t_now) -> p``.

    A day qualifies when its anomaly is at or below ``tau`` and the next day
    is observed.  Zero qualifying days yield an empty trial set (a signal the
    caller propagates, not an error).
    """
    days = _trial_days(anoms, tau)
    if days.size == 0:
        return TrialSet(tau=float(tau), day=days, p=np.empty(0), x=np.empty(0, dtype=np.int8), scheme=scheme)
    t_now = anoms.values[days]
    p = None
    try:
        candidate = np.asarray(forecaster(t_now), dtype=float)
        if candidate.shape == t_now.shape:
            p = candidate
    except (TypeError, ValueError, NotAForecastInstance):
        p = None
    if p is None:
        p = np.array([float(forecaster(float(t))) for t in t_now])
    x = (anoms.values[days + 1] > tau).astype(np.int8)
    return TrialSet(tau=float(tau), day=days, p=p, x=x, scheme=scheme)


def trials_from_probabilities(
    probs: Mapping[int, float], anoms: AnomalySeries, tau: float, scheme: str = ""
) -> TrialSet:
    """Trials from per-target-day probabilities (day keys name the forecast target).

    The trial for target day m sits at issuing day ``n = m - 1`` and is kept
    only when day n is observed at or below ``tau`` and day m is observed.
    """
    v = anoms.values
    mask = anoms.present
    days = []
    ps = []
    xs = []
    for target in sorted(probs):
        n = target - 1
        if n < 0 or target >= len(v):
            continue
        if not (mask[n] and mask[target] and v[n] <= tau):
            continue
        days.append(n)
        ps.append(float(probs[target]))
        xs.append(1 if v[target] > tau else 0)
    return TrialSet(
        tau=float(tau),
        day=np.array(days, dtype=int),
        p=np.array(ps),
        x=np.array(xs, dtype=np.int8),
        scheme=scheme,
    )


def brier(p, x):
    """Quadratic score ``(x - p)^2``; 0 is perfect, orientation is negative."""
    p_arr = np.asarray(p, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if p_arr.size and (p_arr.min() < 0.0 or p_arr.max() > 1.0):
        raise ValueError("p must lie in [0, 1]")
    if x_arr.size and not np.all((x_arr == 0.0) | (x_arr == 1.0)):
        raise ValueError("x must be 0 or 1")
    score = (x_arr - p_arr) ** 2
    if np.ndim(p) == 0 and np.ndim(x) == 0:
        return float(score)
    return score


def bss(mean_s1: float, mean_s2: float) -> float:
    """Skill ``1 - S1/S2`` of scheme 1 against reference scheme 2 (mean scores)."""
    if mean_s2 <= 0.0:
        raise UndefinedSkillError("reference mean score must be positive")
    return 1.0 - mean_s1 / mean_s2


def _align(trials1: TrialSet, trials2: TrialSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-trial Brier scores of both schemes on their common days."""
    common, idx1, idx2 = np.intersect1d(trials1.day, trials2.day, return_indices=True)
    if common.size == 0:
        raise InsufficientDataError("the two trial sets share no days")
    s1 = (trials1.x[idx1].astype(float) - trials1.p[idx1]) ** 2
    s2 = (trials2.x[idx2].astype(float) - trials2.p[idx2]) ** 2
    return common, s1, s2


def bss_between(trials1: TrialSet, trials2: TrialSet) -> float:
    """Point BSS of scheme 1 against scheme 2, restricted to their common days."""
    _, s1, s2 = _align(trials1, trials2)
    return bss(float(s1.mean()), float(s2.mean()))


def bss_confidence(
    trials1: TrialSet,
    trials2: TrialSet,
    level: float = 0.95,
    block_len: int = 10,
    n_boot: int = 2000,
    seed=None,
) -> tuple[float, float]:
    """Moving-block bootstrap percentile interval for the BSS of scheme 1 vs 2.

    Day blocks of ``block_len`` consecutive calendar days are resampled in a
    paired fashion (both schemes' scores travel together), which respects the
    serial correlation of daily anomalies.

    Raises
    ------
    InsufficientDataError
        The common trial days span fewer days than one block.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if block_len < 1:
        raise ValueError("block_len must be >= 1")
    days, s1, s2 = _align(trials1, trials2)
    span = int(days[-1] - days[0]) + 1
    if span < block_len:
        raise InsufficientDataError(f"trial days span {span} days, below one block of {block_len}")

    offsets = days - days[0]
    sum1 = np.bincount(offsets, weights=s1, minlength=span)
    sum2 = np.bincount(offsets, weights=s2, minlength=span)
    count = np.bincount(offsets, minlength=span).astype(float)
    c1 = np.concatenate(([0.0], np.cumsum(sum1)))
    c2 = np.concatenate(([0.0], np.cumsum(sum2)))
    cc = np.concatenate(([0.0], np.cumsum(count)))
    n_starts = span - block_len + 1
    block1 = c1[block_len:] - c1[:n_starts]
    block2 = c2[block_len:] - c2[:n_starts]
    blockc = cc[block_len:] - cc[:n_starts]

    n_blocks = -(-span // block_len)  # ceil
    rng = np.random.default_rng(seed)
    reps = np.empty(n_boot)
    chunk = max(1, 50_000_000 // max(n_blocks * 8, 1))
    pos = 0
    while pos < n_boot:
        size = min(chunk, n_boot - pos)
        starts = rng.integers(0, n_starts, size=(size, n_blocks))
        tot1 = block1[starts].sum(axis=1)
        tot2 = block2[starts].sum(axis=1)
        totc = blockc[starts].sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            reps[pos : pos + size] = 1.0 - (tot1 / totc) / (tot2 / totc)
        pos += size
    reps = reps[np.isfinite(reps)]
    if reps.size == 0:
        raise InsufficientDataError("no bootstrap replicate produced a finite skill score")
    lo, hi = np.quantile(reps, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


def deterministic(p: float, zeta: float) -> int:
    """Alarm rule: 1 when ``p > zeta`` (strict), else 0."""
    return int(p > zeta)


@dataclass(frozen=True)
class RocCurve:
    """Hit rate against false alarm rate, swept from insensitive to maximally sensitive.

    Point ``i`` is reached with the alarm rule ``p > zeta[i]``; the sweep
    starts at (0, 0) with ``zeta = +inf`` and ends at (1, 1) with ``-inf``.
    """

    zeta: np.ndarray
    f: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        zeta = np.array(self.zeta, dtype=float)
        f = np.array(self.f, dtype=float)
        h = np.array(self.h, dtype=float)
        if not (zeta.size == f.size == h.size) or zeta.size < 2:
            raise ValueError("a ROC curve needs matching zeta/f/h arrays with >= 2 points")
        if f[0] != 0.0 or h[0] != 0.0 or f[-1] != 1.0 or h[-1] != 1.0:
            raise ValueError("a ROC curve runs from (0, 0) to (1, 1)")
        if np.any(np.diff(f) < 0.0) or np.any(np.diff(h) < 0.0):
            raise ValueError("hit and false alarm rates must be non-decreasing along the sweep")
        for name, arr in (("zeta", zeta), ("f", f), ("h", h)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.zeta.size

    def points(self) -> list[tuple[float, float, float]]:
        return [(float(F), float(H), float(z)) for F, H, z in zip(self.f, self.h, self.zeta)]


def roc_curve(trials: TrialSet) -> RocCurve:
    """Threshold sweep over the distinct forecast values, highest first.

    All trials tied at one forecast value are processed before a point is
    emitted, so ties contribute a single diagonal segment.

    Raises
    ------
    DegenerateTrialsError
        The trial set has no events or no non-events.
    """
    x = trials.x.astype(bool)
    n_pos = int(x.sum())
    n_neg = int((~x).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTrialsError(f"need events and non-events, have {n_pos} and {n_neg}")

    order = np.argsort(-trials.p, kind="stable")
    p_sorted = trials.p[order]
    x_sorted = x[order]
    group_end = np.nonzero(np.diff(p_sorted))[0]
    group_end = np.append(group_end, p_sorted.size - 1)

    cum_hits = np.cumsum(x_sorted)[group_end]
    cum_false = np.cumsum(~x_sorted)[group_end]
    h = np.concatenate(([0.0], cum_hits / n_pos))
    f = np.concatenate(([0.0], cum_false / n_neg))
    distinct = p_sorted[group_end]
    zeta = np.concatenate(([np.inf], distinct[1:], [-np.inf]))
    return RocCurve(zeta=zeta, f=f, h=h)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve."""
    return float(0.5 * np.sum(np.diff(curve.f) * (curve.h[1:] + curve.h[:-1])))


def auc_delong_ci(trials: TrialSet, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Rank-based AUC with a structural-components variance and normal interval.

    The point estimate is the tie-corrected two-sample rank statistic (ties
    count one half).  Per-observation placement components yield the variance;
    the normal-approximation interval is clipped to [0, 1].

    Raises
    ------
    DegenerateTrialsError
        Fewer than two events or two non-events.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    x = trials.x.astype(bool)
    pos = trials.p[x]
    neg = trials.p[~x]
    m, n = pos.size, neg.size
    if m < 2 or n < 2:
        raise DegenerateTrialsError(f"need >= 2 events and non-events, have {m} and {n}")

    tz = rankdata(np.concatenate([pos, neg]), method="average")
    tx = rankdata(pos, method="average")
    ty = rankdata(neg, method="average")
    value = (tz[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    v01 = (tz[:m] - tx) / n  # placement of each event among non-events
    v10 = 1.0 - (tz[m:] - ty) / m  # placement of each non-event among events
    variance = v01.var(ddof=1) / m + v10.var(ddof=1) / n
    half = float(ndtri(0.5 + level / 2.0)) * math.sqrt(max(variance, 0.0))
    return float(value), (max(0.0, value - half), min(1.0, value + half))


# -- threshold sweeps -------------------------------------------------------

SKILL_COLUMNS = (
    "scheme",
    "q",
    "tau",
    "n_trials",
    "n_events",
    "brier",
    "bss",
    "bss_lo",
    "bss_hi",
    "auc",
    "auc_lo",
    "auc_hi",
    "flags",
)


@dataclass(frozen=True)
class SkillRow:
    scheme: str
    q: float
    tau: float
    n_trials: int
    n_events: int
    brier: float
    bss: float
    bss_lo: float
    bss_hi: float
    auc: float
    auc_lo: float
    auc_hi: float
    flags: str = ""

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in SKILL_COLUMNS}


@dataclass(frozen=True)
class SkillReport:
    """Sweep results, one row per (scheme, quantile) cell."""

    rows: tuple[SkillRow, ...]

    def to_json(self, dest=None) -> str:
        text = json.dumps([row.as_dict() for row in self.rows], sort_keys=True, allow_nan=True)
        if dest is not None:
            Path(dest).write_text(text + "\n", encoding="utf-8")
        return text

    def schemes(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row.scheme not in seen:
                seen.append(row.scheme)
        return seen


def _as_trials(forecast, anoms: AnomalySeries, tau: float, scheme: str) -> TrialSet:
    if callable(forecast):
        return build_trials(forecast, anoms, tau, scheme=scheme)
    return trials_from_probabilities(forecast, anoms, tau, scheme=scheme)


def threshold_sweep(
    schemes: Mapping[str, Callable[[float], object]],
    train_anoms: AnomalySeries,
    test_anoms: AnomalySeries,
    q_grid,
    *,
    reference: str = "cebr",
    level: float = 0.95,
    block_len: int = 10,
    n_boot: int = 2000,
    seed=None,
) -> SkillReport:
    """Score every scheme against the reference across a grid of threshold quantiles.

    ``schemes`` maps a name to a factory called with the threshold ``tau``;
    the factory returns either a forecaster ``t_now -> p`` or a mapping of
    target day to probability.  Thresholds come from the empirical quantiles
    of the training anomalies.  Cells with no trials or degenerate outcome
    classes are flagged in the row rather than fabricated.
    """
    if reference not in schemes:
        raise ValueError(f"reference scheme {reference!r} missing from schemes")
    train_values = train_anoms.values[train_anoms.present]
    if train_values.size == 0:
        raise InsufficientDataError("no training anomalies for threshold quantiles")

    children = np.random.SeedSequence(seed).spawn(len(q_grid) * len(schemes))
    rows = []
    for j, q in enumerate(q_grid):
        tau = float(np.quantile(train_values, q))
        ref_trials = _as_trials(schemes[reference](tau), test_anoms, tau, reference)
        for i, (name, factory) in enumerate(schemes.items()):
            child = children[j * len(schemes) + i]
            trials = ref_trials if name == reference else _as_trials(factory(tau), test_anoms, tau, name)
            flags = []
            mean_brier = bss_point = bss_lo = bss_hi = auc_point = auc_lo = auc_hi = math.nan
            if len(trials) == 0:
                flags.append("no-trials")
            else:
                mean_brier = float(brier(trials.p, trials.x).mean())
                try:
                    bss_point = bss_between(trials, ref_trials)
                    bss_lo, bss_hi = bss_confidence(
                        trials, ref_trials, level=level, block_len=block_len, n_boot=n_boot, seed=child
                    )
                except (InsufficientDataError, UndefinedSkillError) as exc:
                    flags.append(f"no-bss:{type(exc).__name__}")
                try:
                    auc_point, (auc_lo, auc_hi) = auc_delong_ci(trials, level=level)
                except DegenerateTrialsError:
                    flags.append("degenerate-roc")
            rows.append(
                SkillRow(
                    scheme=name,
                    q=float(q),
                    tau=tau,
                    n_trials=len(trials),
                    n_events=trials.n_events,
                    brier=mean_brier,
                    bss=bss_point,
                    bss_lo=bss_lo,
                    bss_hi=bss_hi,
                    auc=auc_point,
                    auc_lo=auc_lo,
                    auc_hi=auc_hi,
                    flags=";".join(flags),
                )
            )
    return SkillReport(rows=tuple(rows))
