"""Theoretical exceedance statistics of AR(1) processes via adaptive quadrature.

All conditional quantities are evaluated in standardised units (current value
measured in stationary standard deviations), where the innovation scale drops
out analytically; results therefore do not depend on sigma at fixed
(alpha, q).  Conditional expectations are computed as ratios of a numerator
and a denominator integral so that small conditioning probabilities stay
well-behaved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

from scipy import integrate as _quadpack
from scipy.special import ndtr, ndtri

from .errors import QuadratureError, UndefinedSkillError

__all__ = [
    "TheoryParams",
    "QuadratureSpec",
    "QuadResult",
    "DEFAULT_QUAD",
    "integrate",
    "threshold_from_quantile",
    "theoretical_cebr",
    "cebr_expected_brier",
    "ar1_expected_brier",
    "theoretical_bss",
    "curve",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Quantiles this close to 0 or 1 make the conditioning ill-posed; refuse them.
_MIN_Q = 1e-4


@dataclass(frozen=True)
class TheoryParams:
    """AR(1) parameters plus the climatological quantile defining the threshold."""

    alpha: float
    sigma: float
    q: float

    def __post_init__(self):
        if not abs(self.alpha) < 1.0:
            raise ValueError("stationarity requires |alpha| < 1")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if not _MIN_Q <= self.q <= 1.0 - _MIN_Q:
            raise ValueError(f"q must lie in [{_MIN_Q}, {1.0 - _MIN_Q}]")

    @property
    def sigma_c(self) -> float:
        """Stationary (climatological) standard deviation."""
        return self.sigma / math.sqrt(1.0 - self.alpha * self.alpha)


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and domain truncation for the adaptive quadrature engine."""

    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    half_width: float = 10.0  # truncation, in units of the stationary sd
    max_subdivisions: int = 200

    def __post_init__(self):
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.half_width < 8.0:
            raise ValueError("half_width must be >= 8 stationary sds")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUAD = QuadratureSpec()


class QuadResult(NamedTuple):
    value: float
    error: float


def integrate(f: Callable[[float], float], a: float, b: float, quad: QuadratureSpec = DEFAULT_QUAD) -> QuadResult:
    """Adaptive Gauss-Kronrod integral of ``f`` over ``[a, b]`` with an error estimate.

    Raises
    ------
    QuadratureError
        The requested tolerance was not reached before the subdivision limit;
        the exception carries the best estimate and its error bound.
    """
    out = _quadpack.quad(
        f,
        a,
        b,
        epsabs=quad.abs_tol,
        epsrel=quad.rel_tol,
        limit=quad.max_subdivisions,
        full_output=1,
    )
    if len(out) > 3:
        message = " ".join(str(out[3]).split())
        raise QuadratureError(
            f"quadrature did not converge: {message}", estimate=out[0], error=out[1]
        )
    return QuadResult(value=float(out[0]), error=float(out[1]))


def threshold_from_quantile(params: TheoryParams) -> float:
    """Threshold whose climatological quantile is ``q``: ``sigma_C * Phi^-1(q)``."""
    return params.sigma_c * float(ndtri(params.q))


def _std_normal_pdf(u: float) -> float:
    return math.exp(-0.5 * u * u) / _SQRT_2PI


def _conditional_ratio(params: TheoryParams, quad: QuadratureSpec, kind: str) -> tuple[float, float]:
    """Ratio of integrals over the below-threshold region, in standardised units.

    With ``u = t / sigma_C`` and ``u_tau = Phi^-1(q)``, the one-step transition
    tail evaluated at the threshold is ``Phi(g (u_tau - alpha u))`` with
    ``g = 1 / sqrt(1 - alpha^2)``; sigma cancels exactly.
    """
    alpha = params.alpha
    u_tau = float(ndtri(params.q))
    g = 1.0 / math.sqrt(1.0 - alpha * alpha)

    if kind == "stay":
        def f(u: float) -> float:
            return float(ndtr(g * (u_tau - alpha * u))) * _std_normal_pdf(u)
    elif kind == "brier":
        def f(u: float) -> float:
            stay = float(ndtr(g * (u_tau - alpha * u)))
            return stay * (1.0 - stay) * _std_normal_pdf(u)
    else:  # pragma: no cover - internal misuse
        raise ValueError(kind)

    lo = -quad.half_width
    num = integrate(f, lo, u_tau, quad)
    den = integrate(_std_normal_pdf, lo, u_tau, quad)
    ratio = num.value / den.value
    err = (num.error + abs(ratio) * den.error) / den.value
    return ratio, err


def theoretical_cebr(params: TheoryParams, quad: QuadratureSpec = DEFAULT_QUAD, *, with_error: bool = False):
    """Exceedance rate conditional on being at or below the threshold today.

    Averages the one-step exceedance probability over the stationary
    distribution restricted to the region below the threshold.  Equals
    ``1 - q`` only for ``alpha = 0``; positive correlation lowers the rate.
    """
    stay, err = _conditional_ratio(params, quad, "stay")
    rate = 1.0 - stay
    if with_error:
        return rate, err
    return rate


def cebr_expected_brier(rate: float) -> float:
    """Expected Brier score ``r (1 - r)`` of the constant base-rate forecast."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be a probability")
    return rate * (1.0 - rate)


def ar1_expected_brier(params: TheoryParams, quad: QuadratureSpec = DEFAULT_QUAD, *, with_error: bool = False):
    """Expected Brier score of forecasting the true conditional exceedance probability.

    The pointwise expected score ``Phi (1 - Phi)`` of the transition tail is
    averaged over the stationary distribution below the threshold.
    """
    value, err = _conditional_ratio(params, quad, "brier")
    if with_error:
        return value, err
    return value


def theoretical_bss(params: TheoryParams, quad: QuadratureSpec = DEFAULT_QUAD, *, with_error: bool = False):
    """Skill of the conditional forecast against the constant base-rate forecast.

    Raises
    ------
    UndefinedSkillError
        The base-rate expected Brier score is zero at this quantile.
    """
    rate, rate_err = theoretical_cebr(params, quad, with_error=True)
    reference = cebr_expected_brier(rate)
    if reference <= 0.0:
        raise UndefinedSkillError(f"reference Brier score is zero at q={params.q:g}")
    score, score_err = ar1_expected_brier(params, quad, with_error=True)
    bss = 1.0 - score / reference
    if with_error:
        ref_err = abs(1.0 - 2.0 * rate) * rate_err
        err = (score_err + (score / reference) * ref_err) / reference
        return bss, err
    return bss


def curve(alpha: float, sigma: float, q_values, quad: QuadratureSpec = DEFAULT_QUAD) -> list[dict]:
    """Theory rows ``{q, r_tau, brier_cebr, brier_ar1, bss}`` over a quantile grid."""
    rows = []
    for q in q_values:
        params = TheoryParams(alpha=alpha, sigma=sigma, q=float(q))
        rate = theoretical_cebr(params, quad)
        reference = cebr_expected_brier(rate)
        score = ar1_expected_brier(params, quad)
        bss = 1.0 - score / reference if reference > 0.0 else math.nan
        rows.append(
            {
                "q": float(q),
                "r_tau": rate,
                "brier_cebr": reference,
                "brier_ar1": score,
                "bss": bss,
            }
        )
    return rows
