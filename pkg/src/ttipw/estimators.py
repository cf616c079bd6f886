"""Z-series construction and the trimmed IPW point estimators.

The weighted variable z_i = h_i * y_i with h_i = (d_i - p_i)/(p_i(1-p_i))
identifies the average treatment effect by its mean. Estimators here differ
only in which observations they drop before averaging: none, the largest
mean-centered |z| (trim-by-z), large |x| (fixed or adaptive), extreme
propensities, or large |y|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateProbabilityError, DomainError, FractileError


def nearest_int(value):
    """Round half away from zero; all schedule inputs are nonnegative."""
    return int(math.floor(value + 0.5))


class EstimatorTag(Enum):
    UNTRIMMED = "untrimmed"
    TZ = "tz"
    TZO = "tzo"
    TX_FIXED = "tx_fixed"
    TX_ADAPTIVE = "tx_adaptive"
    TP = "tp"
    TY = "ty"


@dataclass(frozen=True)
class ZSeries:
    """Weighted values z, their mean, centered values, and the permutation
    sorting |centered| in descending order (ties keep input order)."""

    z: np.ndarray
    mean_z: float
    centered: np.ndarray
    abs_order: np.ndarray

    @property
    def n(self):
        return self.z.shape[0]


@dataclass(frozen=True)
class FractileSchedule:
    """Slowly growing trimming and tail-estimation fractiles.

    k(n) = max(1, round(lambda_k * (ln n)^(1-iota))) observations are trimmed;
    tail-index fractiles are m(n, phi) = round(phi * ln n) for phi inside
    phi_range, with m_base(n) = max(2, round(ln n)) the phi=1 anchor.
    """

    lambda_k: float = 0.25
    iota: float = 1e-10
    phi_range: tuple = (2.0, 16.0)

    def k(self, n):
        return fractile_k(n, self.lambda_k, self.iota)

    def m_base(self, n):
        return max(2, nearest_int(math.log(n)))

    def m_at(self, n, phi):
        return nearest_int(phi * math.log(n))


@dataclass
class EstimateReport:
    """One estimator's output: point estimate, trimming accounting, flags."""

    estimator_tag: EstimatorTag
    theta_hat: float
    bias_correction: float = 0.0
    trimmed_count: int = 0
    trimmed_fraction: float = 0.0
    threshold: float = math.inf
    diagnostics: dict = field(default_factory=dict)


def compute_z(sample, probs):
    """Build the ZSeries from a sample and per-observation probabilities.

    probs may come from a PropensityFit (.probs) or be the true propensity
    scores in known-propensity mode.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (sample.n,):
        raise DomainError(f"probs must have shape ({sample.n},), got {probs.shape}")
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        bad = int(np.argmax((probs <= 0.0) | (probs >= 1.0)))
        raise DegenerateProbabilityError(f"p[{bad}] = {probs[bad]} is 0 or 1 at machine precision")
    h = (sample.d - probs) / (probs * (1.0 - probs))
    z = h * sample.y
    mean_z = float(z.mean())
    centered = z - mean_z
    abs_order = np.argsort(-np.abs(centered), kind="stable")
    return ZSeries(z=z, mean_z=mean_z, centered=centered, abs_order=abs_order)


def fractile_k(n, lambda_k=0.25, iota=1e-10):
    """Trim-by-z fractile: max(1, round(lambda_k * (ln n)^(1-iota)))."""
    if n < 2:
        raise FractileError(f"need n >= 2, got {n}")
    return max(1, nearest_int(lambda_k * math.log(n) ** (1.0 - iota)))


def fractile_x(n):
    """Adaptive trim-by-x fractile: round(2n / ln n)."""
    if n < 2:
        raise FractileError(f"need n >= 2, got {n}")
    return nearest_int(2.0 * n / math.log(n))


def _kth_largest(values, k):
    n = values.shape[0]
    return float(np.partition(values, n - k)[n - k])


def estimate_untrimmed(zseries):
    """Plain mean of z."""
    return EstimateReport(EstimatorTag.UNTRIMMED, theta_hat=zseries.mean_z)


def estimate_tz(zseries, k):
    """Trim the k largest mean-centered |z|, rescale by n - k.

    The threshold is the k-th largest |centered| and the indicator is a
    strict inequality, so observations tied with the threshold share its
    fate and trimmed_count equals k exactly only under distinct values.
    """
    n = zseries.n
    if not 1 <= k < n:
        raise FractileError(f"trim fractile k={k} outside [1, {n - 1}]")
    abs_centered = np.abs(zseries.centered)
    threshold = float(abs_centered[zseries.abs_order[k - 1]])
    keep = abs_centered < threshold
    theta = float(zseries.z[keep].sum() / (n - k))
    trimmed = int(n - keep.sum())
    return EstimateReport(
        EstimatorTag.TZ,
        theta_hat=theta,
        trimmed_count=trimmed,
        trimmed_fraction=trimmed / n,
        threshold=threshold,
    )


def estimate_tx_fixed(sample, zseries, nu, trim_col=0):
    """Keep observations with |x[trim_col]| <= nu; scale by n."""
    if not 0 <= trim_col < sample.k:
        raise DomainError(f"trim_col {trim_col} outside [0, {sample.k - 1}]")
    keep = np.abs(sample.x[:, trim_col]) <= nu
    n = zseries.n
    trimmed = int(n - keep.sum())
    return EstimateReport(
        EstimatorTag.TX_FIXED,
        theta_hat=float(zseries.z[keep].sum() / n),
        trimmed_count=trimmed,
        trimmed_fraction=trimmed / n,
        threshold=float(nu),
        diagnostics={"trim_col": trim_col},
    )


def estimate_tx_adaptive(sample, zseries, k_x, trim_col=0):
    """Keep |x[trim_col]| at or below its k_x-th largest order statistic.

    The non-strict inequality keeps the threshold observation itself, so a
    nominal k_x trims k_x - 1 observations under distinct |x|.
    """
    if not 0 <= trim_col < sample.k:
        raise DomainError(f"trim_col {trim_col} outside [0, {sample.k - 1}]")
    n = zseries.n
    if not 1 <= k_x <= n:
        raise FractileError(f"fractile k_x={k_x} outside [1, {n}]")
    abs_x = np.abs(sample.x[:, trim_col])
    threshold = _kth_largest(abs_x, k_x)
    keep = abs_x <= threshold
    trimmed = int(n - keep.sum())
    return EstimateReport(
        EstimatorTag.TX_ADAPTIVE,
        theta_hat=float(zseries.z[keep].sum() / n),
        trimmed_count=trimmed,
        trimmed_fraction=trimmed / n,
        threshold=threshold,
        diagnostics={"trim_col": trim_col},
    )


def estimate_tp(zseries, probs, k_p):
    """Keep propensities between their k_p-th largest and k_p-th smallest
    order statistics (both boundaries inclusive); scale by n."""
    n = zseries.n
    if not 1 <= k_p <= n // 2:
        raise FractileError(f"fractile k_p={k_p} outside [1, {n // 2}]")
    probs = np.asarray(probs, dtype=float)
    descending = np.sort(probs)[::-1]
    upper = float(descending[k_p - 1])
    lower = float(descending[n - k_p])
    keep = (probs >= lower) & (probs <= upper)
    trimmed = int(n - keep.sum())
    return EstimateReport(
        EstimatorTag.TP,
        theta_hat=float(zseries.z[keep].sum() / n),
        trimmed_count=trimmed,
        trimmed_fraction=trimmed / n,
        threshold=upper,
        diagnostics={"lower": lower, "upper": upper},
    )


def estimate_ty(sample, zseries, k_y):
    """Keep |y| at or below its k_y-th largest order statistic; scale by n."""
    n = zseries.n
    if not 1 <= k_y <= n:
        raise FractileError(f"fractile k_y={k_y} outside [1, {n}]")
    abs_y = np.abs(sample.y)
    threshold = _kth_largest(abs_y, k_y)
    keep = abs_y <= threshold
    trimmed = int(n - keep.sum())
    return EstimateReport(
        EstimatorTag.TY,
        theta_hat=float(zseries.z[keep].sum() / n),
        trimmed_count=trimmed,
        trimmed_fraction=trimmed / n,
        threshold=threshold,
    )
