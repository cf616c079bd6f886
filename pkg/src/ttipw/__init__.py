"""Tail-trimmed, bias-corrected inverse probability weighting for average
treatment effects under limited overlap."""

__version__ = "0.1.0"

from .errors import TTIPWError
from .estimators import (
    EstimateReport,
    EstimatorTag,
    FractileSchedule,
    ZSeries,
    compute_z,
    estimate_tp,
    estimate_tx_adaptive,
    estimate_tx_fixed,
    estimate_ty,
    estimate_tz,
    estimate_untrimmed,
    fractile_k,
    fractile_x,
)
from .inference import InferenceReport, confidence_interval, t_statistic, variance_estimate
from .montecarlo import (
    Case,
    Distribution,
    FractileOverrides,
    PropensityMode,
    ScenarioConfig,
    SummaryRow,
    draw,
    generate_dgp,
    ks_normality_ratio,
    run_replication,
    run_study,
    summarize,
)
from .propensity import LinkFamily, PropensityFit, fit_mle, link_derivative, link_eval, score
from .sample import CSVSchema, Observation, Sample, ValidationReport, load_csv, validate, write_csv
from .tails import (
    BiasEstimate,
    TailFit,
    TailSide,
    bias_approximation,
    bias_estimate,
    estimate_tzo,
    hall_scale,
    hill_index,
    select_phi,
    split_tails,
)

__all__ = [
    "BiasEstimate",
    "CSVSchema",
    "Case",
    "Distribution",
    "EstimateReport",
    "EstimatorTag",
    "FractileOverrides",
    "FractileSchedule",
    "InferenceReport",
    "LinkFamily",
    "Observation",
    "PropensityFit",
    "PropensityMode",
    "Sample",
    "ScenarioConfig",
    "SummaryRow",
    "TTIPWError",
    "TailFit",
    "TailSide",
    "ValidationReport",
    "ZSeries",
    "bias_approximation",
    "bias_estimate",
    "compute_z",
    "confidence_interval",
    "draw",
    "estimate_tp",
    "estimate_tx_adaptive",
    "estimate_tx_fixed",
    "estimate_ty",
    "estimate_tz",
    "estimate_tzo",
    "estimate_untrimmed",
    "fit_mle",
    "fractile_k",
    "fractile_x",
    "generate_dgp",
    "hall_scale",
    "hill_index",
    "ks_normality_ratio",
    "link_derivative",
    "link_eval",
    "load_csv",
    "run_replication",
    "run_study",
    "score",
    "select_phi",
    "split_tails",
    "summarize",
    "t_statistic",
    "validate",
    "variance_estimate",
    "write_csv",
]
