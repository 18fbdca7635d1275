"""Next-day threshold exceedance forecasting and verification for daily anomalies.

Four forecast schemes (conditional base rate, AR(1), raw dressed ensemble,
calibrated ensemble) plus proper-score and ROC verification, a quadrature
engine for the matching theoretical skill curves, and a simulator that closes
the loop between theory and empirics.
"""

__version__ = "0.1.0"

from . import ar, cebr, cli, ensemble, errors, series, theory, verify
from .ar import ARModel, OrderSelection, exceedance_prob, fit_ar, simulate_ar1, stationary_sd
from .cebr import CEBRModel, cebr_forecast, empirical_cebr
from .ensemble import (
    BiasModel,
    EnsembleSeries,
    GridSpec,
    InflationStats,
    apply_bias_correction,
    compute_inflation_stats,
    dressed_exceedance_prob,
    ensemble_anomalies,
    fit_seasonal_bias,
    load_ensemble_csv,
    nearest_grid_point,
    postprocessed_forecast,
    raw_forecast,
    synthetic_archive,
    wang_kernel_width,
)
from .series import (
    AnomalySeries,
    ClimatologyModel,
    DailySeries,
    DensityEstimate,
    autocorrelation,
    compute_anomalies,
    evaluate_climatology,
    fit_climatology,
    kde_density,
    load_daily_series,
    silverman_width,
)
from .theory import (
    QuadratureSpec,
    TheoryParams,
    ar1_expected_brier,
    cebr_expected_brier,
    integrate,
    theoretical_bss,
    theoretical_cebr,
    threshold_from_quantile,
)
from .verify import (
    RocCurve,
    SkillReport,
    TrialSet,
    auc,
    auc_delong_ci,
    brier,
    bss,
    bss_confidence,
    build_trials,
    deterministic,
    roc_curve,
    threshold_sweep,
    trials_from_probabilities,
)
