"""Simulation study engine: data generation, replication, and summaries.

Treatment follows a threshold-crossing rule d = 1(index - u >= 0) with a
latent error u whose CDF matches the propensity link, so the parametric
model is correctly specified by construction. Replications are independent
and deterministic given (seed, rep_index); summaries therefore do not
depend on execution order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtr, ndtri

from .errors import (
    DegenerateProbabilityError,
    DegenerateScaleError,
    DomainError,
    SampleValidationError,
    SeparationError,
    SingularMatrixError,
)
from .estimators import (
    FractileSchedule,
    compute_z,
    estimate_tp,
    estimate_tx_adaptive,
    estimate_tx_fixed,
    estimate_ty,
    estimate_tz,
    estimate_untrimmed,
    fractile_x,
    nearest_int,
)
from .propensity import LinkFamily, fit_mle
from .sample import Sample
from .tails import estimate_tzo

SQRT2 = math.sqrt(2.0)

# Asymptotic 5% critical value of the one-sample Kolmogorov-Smirnov statistic.
KS_CRITICAL_5PCT = 1.358


class Distribution(Enum):
    STD_NORMAL = "normal"
    UNIT_LAPLACE = "laplace"


class Case(Enum):
    SCALAR = "scalar"
    SCALAR_WITH_CONSTANT = "scalar_with_constant"
    MULTIVARIATE3 = "multivariate3"
    MULTIVARIATE4 = "multivariate4"


class PropensityMode(Enum):
    KNOWN = "known"
    ESTIMATED = "estimated"


LINK_FOR_DIST = {
    Distribution.STD_NORMAL: LinkFamily.PROBIT,
    Distribution.UNIT_LAPLACE: LinkFamily.LAPLACE,
}

# Roster evaluated by default: untrimmed, trim-by-z (plain and bias
# corrected), fixed and adaptive trim-by-x, trim-by-propensity at several
# fractiles, and trim-by-y.
DEFAULT_ESTIMATORS = (
    "notrim",
    "tz",
    "tzo",
    "tx",
    "tx_kx",
    "tx_kn",
    "tp_kn2",
    "tp_0.25",
    "tp_0.5",
    "tp_1",
    "tp_2",
    "ty",
)


def uniform_open(rng, size):
    """Uniforms strictly inside (0,1): bin centers of a 2^53 grid."""
    return (rng.integers(0, 1 << 53, size=size, dtype=np.int64) + 0.5) * 2.0**-53


def inverse_cdf(dist, u):
    """Quantile function used for all variate generation."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise DomainError("quantile argument must lie strictly inside (0,1)")
    if dist is Distribution.STD_NORMAL:
        out = ndtri(u)
    elif dist is Distribution.UNIT_LAPLACE:
        out = np.where(
            u < 0.5,
            np.log(np.minimum(2.0 * u, 1.0)) / SQRT2,
            -np.log(np.maximum(2.0 * (1.0 - u), 2.0**-1074)) / SQRT2,
        )
    else:
        raise DomainError(f"unknown distribution {dist!r}")
    return float(out) if out.ndim == 0 else out


def cdf(dist, r):
    """CDF of the latent error; also the propensity link it induces."""
    r = np.asarray(r, dtype=float)
    if dist is Distribution.STD_NORMAL:
        out = ndtr(r)
    elif dist is Distribution.UNIT_LAPLACE:
        out = np.where(
            r <= 0.0,
            0.5 * np.exp(SQRT2 * np.minimum(r, 0.0)),
            1.0 - 0.5 * np.exp(-SQRT2 * np.maximum(r, 0.0)),
        )
    else:
        raise DomainError(f"unknown distribution {dist!r}")
    return float(out) if out.ndim == 0 else out


def draw(dist, rng, size=None):
    """Inverse-CDF variates from a seedable stream (mean 0, variance 1)."""
    return inverse_cdf(dist, uniform_open(rng, size))


@dataclass(frozen=True)
class FractileOverrides:
    """Optional fixed fractiles; None leaves the schedule in charge."""

    k: int | None = None
    k_x: int | None = None
    k_p: int | None = None
    k_y: int | None = None
    nu: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario: design, sample size, estimator roster."""

    n: int
    replications: int
    case: Case = Case.SCALAR
    alpha: float = 0.0
    beta: float = 0.25
    dist_outcomes: Distribution = Distribution.STD_NORMAL
    dist_x: Distribution = Distribution.STD_NORMAL
    dist_u: Distribution = Distribution.STD_NORMAL
    propensity_mode: PropensityMode = PropensityMode.KNOWN
    link: LinkFamily | None = None
    estimators: tuple = DEFAULT_ESTIMATORS
    seed: int = 0
    fractiles: FractileSchedule = field(default_factory=FractileSchedule)
    overrides: FractileOverrides = field(default_factory=FractileOverrides)
    name: str = ""

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"need n >= 2, got {self.n}")
        if self.replications < 2:
            raise DomainError(f"need >= 2 replications, got {self.replications}")
        if self.seed < 0:
            raise DomainError("seed must be a nonnegative integer")
        implied = LINK_FOR_DIST[self.dist_u]
        if self.link is None:
            object.__setattr__(self, "link", implied)
        elif self.link is not implied:
            raise DomainError(
                f"link {self.link.value} does not match the CDF of dist_u {self.dist_u.value}"
            )
        object.__setattr__(self, "estimators", tuple(self.estimators))
        for label in self.estimators:
            _check_estimator_label(label)
        if not self.name:
            object.__setattr__(self, "name", _default_name(self))


def _default_name(config):
    return (
        f"{config.case.value}_{config.dist_outcomes.value}-{config.dist_u.value}"
        f"_a{config.alpha:g}_b{config.beta:g}_n{config.n}_{config.propensity_mode.value}"
    )


def true_gamma(config):
    """Coefficients generating the treatment index, intercept first."""
    b = config.beta
    if config.case in (Case.SCALAR, Case.SCALAR_WITH_CONSTANT):
        return np.array([config.alpha, b])
    return np.array([config.alpha, 0.5, b, b / 2.0])


def trim_column(case):
    """Design-matrix column of the continuous scalar regressor, the one
    covariate used by the trim-by-x and fixed-threshold estimators."""
    if case in (Case.SCALAR, Case.SCALAR_WITH_CONSTANT):
        return 1
    return 2


def generate_dgp(config, rng):
    """Draw one sample; returns (Sample, true propensity scores).

    Variates are generated in the fixed order y0, y1, (bernoulli,) x, u,
    one block of n uniforms each, so a given (seed, rep_index) substream
    always produces the same data. The true average treatment effect is 0
    because the potential outcomes are mean-zero and independent of (x, u).
    """
    n = config.n
    y0 = draw(config.dist_outcomes, rng, n)
    y1 = draw(config.dist_outcomes, rng, n)
    multivariate = config.case in (Case.MULTIVARIATE3, Case.MULTIVARIATE4)
    if multivariate:
        bern = (uniform_open(rng, n) < 0.3).astype(float)
    x_scalar = draw(config.dist_x, rng, n)
    u = draw(config.dist_u, rng, n)

    if multivariate:
        design = np.column_stack([np.ones(n), bern, x_scalar, x_scalar**2])
        names = ("y", "d", "const", "bern", "x", "x_sq")
    else:
        design = np.column_stack([np.ones(n), x_scalar])
        names = ("y", "d", "const", "x")

    index = design @ true_gamma(config)
    d = (index - u >= 0.0).astype(int)
    y = d * y1 + (1 - d) * y0
    true_probs = cdf(config.dist_u, index)
    sample = Sample(y=y, d=d, x=design, column_names=names)
    return sample, true_probs


def _check_estimator_label(label):
    if label in ("notrim", "untrimmed", "tz", "tzo", "tx", "tx_kx", "tx_kn", "tp_kn2", "ty"):
        return
    if label.startswith("tp_"):
        try:
            lam = float(label[3:])
        except ValueError:
            raise DomainError(f"unknown estimator label {label!r}") from None
        if lam <= 0:
            raise DomainError(f"estimator label {label!r} needs a positive fractile factor")
        return
    raise DomainError(f"unknown estimator label {label!r}")


def evaluate_estimators(
    labels, sample, zseries, probs, schedule, trim_col, k=None, k_x=None, k_p=None, k_y=None, nu=None
):
    """Run the labelled estimators on one computed z-series.

    Labels: notrim; tz; tzo; tx (fixed threshold ln ln n); tx_kx (adaptive,
    2n/ln n); tx_kn (adaptive, k_n); tp_kn2 (k_n/2 per propensity tail);
    tp_<lam> (lam*n/ln n per tail); ty (k_n). The keyword fractiles, when
    given, override the schedule defaults. Returns label -> report.
    """
    n = zseries.n
    k_n = k if k is not None else schedule.k(n)
    log_n = math.log(n)
    reports = {}
    for label in labels:
        if label in ("notrim", "untrimmed"):
            report = estimate_untrimmed(zseries)
        elif label == "tz":
            report = estimate_tz(zseries, k_n)
        elif label == "tzo":
            report = estimate_tzo(zseries, k_n, schedule.phi_range)
        elif label == "tx":
            threshold = nu if nu is not None else math.log(log_n)
            report = estimate_tx_fixed(sample, zseries, threshold, trim_col)
        elif label == "tx_kx":
            fractile = k_x if k_x is not None else fractile_x(n)
            report = estimate_tx_adaptive(sample, zseries, fractile, trim_col)
        elif label == "tx_kn":
            report = estimate_tx_adaptive(sample, zseries, k_n, trim_col)
        elif label == "tp_kn2":
            fractile = k_p if k_p is not None else max(1, nearest_int(k_n / 2.0))
            report = estimate_tp(zseries, probs, fractile)
        elif label.startswith("tp_"):
            fractile = k_p if k_p is not None else max(1, nearest_int(float(label[3:]) * n / log_n))
            report = estimate_tp(zseries, probs, fractile)
        elif label == "ty":
            report = estimate_ty(sample, zseries, k_y if k_y is not None else k_n)
        else:
            raise DomainError(f"unknown estimator label {label!r}")
        reports[label] = report
    return reports


@dataclass(frozen=True)
class ReplicationResult:
    rep_index: int
    failed: bool
    failure_reason: str | None
    estimates: dict  # label -> (theta, trimmed_count)


def substream(seed, rep_index):
    """Independent generator for one replication of one study."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep_index,)))


def run_replication(config, rep_index):
    """Generate, fit (if estimated mode), and evaluate one replication.

    MLE separation or non-convergence marks the replication failed rather
    than aborting the study; its estimates are left missing.
    """
    rng = substream(config.seed, rep_index)
    try:
        sample, true_probs = generate_dgp(config, rng)
        if config.propensity_mode is PropensityMode.ESTIMATED:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_mle(sample, config.link)
            if not fit.converged:
                return ReplicationResult(rep_index, True, "mle_not_converged", {})
            probs = fit.probs
        else:
            probs = true_probs
        zseries = compute_z(sample, probs)
        reports = evaluate_estimators(
            config.estimators,
            sample,
            zseries,
            probs,
            config.fractiles,
            trim_column(config.case),
            k=config.overrides.k,
            k_x=config.overrides.k_x,
            k_p=config.overrides.k_p,
            k_y=config.overrides.k_y,
            nu=config.overrides.nu,
        )
    except (
        SeparationError,
        SingularMatrixError,
        DegenerateProbabilityError,
        SampleValidationError,
    ) as exc:
        return ReplicationResult(rep_index, True, type(exc).__name__, {})
    estimates = {label: (r.theta_hat, r.trimmed_count) for label, r in reports.items()}
    return ReplicationResult(rep_index, False, None, estimates)


def run_study(config, n_jobs=1):
    """Run every replication; results come back keyed by rep_index."""
    indices = range(config.replications)
    if n_jobs == 1:
        results = [run_replication(config, i) for i in indices]
    else:
        results = Parallel(n_jobs=n_jobs, batch_size="auto")(
            delayed(run_replication)(config, i) for i in indices
        )
    return sorted(results, key=lambda r: r.rep_index)


def ks_normality_ratio(estimates, s_n):
    """Kolmogorov-Smirnov distance of estimates/s_n from the standard
    normal CDF, divided by the asymptotic 5% critical value 1.358/sqrt(R).
    Values above one reject standard normality at the 5% level."""
    estimates = np.asarray(estimates, dtype=float)
    reps = estimates.shape[0]
    if reps < 2:
        raise DomainError(f"need >= 2 estimates, got {reps}")
    if s_n <= 0.0:
        raise DegenerateScaleError("s_n must be positive")
    ratios = np.sort(estimates / s_n)
    normal_cdf = ndtr(ratios)
    steps = np.arange(1, reps + 1) / reps
    gap_upper = float(np.max(steps - normal_cdf))
    gap_lower = float(np.max(normal_cdf - (steps - 1.0 / reps)))
    return max(gap_upper, gap_lower) / (KS_CRITICAL_5PCT / math.sqrt(reps))


@dataclass(frozen=True)
class SummaryRow:
    """Across-replication metrics for one estimator."""

    estimator: str
    mean: float
    median: float
    rmse: float
    ks_ratio: float
    trim_pct: float
    reject_1: float
    reject_5: float
    reject_10: float
    failed_reps: int


def summarize(config, results):
    """Aggregate replication estimates into one row per estimator.

    rmse is sqrt(mean of squared estimates) about the true effect 0; the
    t-test of effect 0 standardizes each estimate by that rmse and compares
    against standard normal critical values; trim_pct is the average
    percentage of observations trimmed per sample.
    """
    ok = sorted((r for r in results if not r.failed), key=lambda r: r.rep_index)
    if len(ok) < 2:
        raise DomainError(f"need >= 2 successful replications, got {len(ok)}")
    failed = len(results) - len(ok)
    reps = len(ok)
    critical = ndtri(1.0 - np.array([0.01, 0.05, 0.10]) / 2.0)

    rows = []
    for label in config.estimators:
        thetas = np.array([r.estimates[label][0] for r in ok])
        trimmed_total = sum(r.estimates[label][1] for r in ok)
        s_n = float(np.sqrt(np.mean(thetas**2)))
        if s_n > 0.0:
            ks = ks_normality_ratio(thetas, s_n)
            ratios = np.abs(thetas / s_n)
            rejects = [float(np.mean(ratios > c)) for c in critical]
        else:
            ks = math.nan
            rejects = [0.0, 0.0, 0.0]
        rows.append(
            SummaryRow(
                estimator=label,
                mean=float(thetas.mean()),
                median=float(np.median(thetas)),
                rmse=s_n,
                ks_ratio=ks,
                trim_pct=100.0 * trimmed_total / (reps * config.n),
                reject_1=rejects[0],
                reject_5=rejects[1],
                reject_10=rejects[2],
                failed_reps=failed,
            )
        )
    return rows
