"""Plug-in asymptotic scale and normal-limit inference for the trimmed,
bias-corrected estimator.

The squared scale averages, over all observations, the squared sum of the
kept centered z value (re-centered by the bias estimate) and a projection
of the propensity-score estimation noise. In known-propensity mode the
score terms vanish and the scale reduces to a trimmed second moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import (
    DegenerateScaleError,
    DomainError,
    FractileError,
    NotConvergedError,
    SingularMatrixError,
)
from .propensity import score_matrix

# Information matrices with condition estimates past this are rejected.
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class InferenceReport:
    """Scale estimate and the normal-limit test/interval built from it.

    t_stat is NaN when v_hat_sq is 0 (the standalone t_statistic raises
    instead). d_hat_vec is None in known-propensity mode.
    """

    v_hat_sq: float
    std_error: float
    t_stat: float
    ci: tuple
    level: float
    d_hat_vec: np.ndarray | None


def variance_estimate(sample, fit, zseries, k, b_hat, theta_hat=0.0, null_value=0.0, level=0.95):
    """Estimate the squared asymptotic scale for the trim-by-z estimator.

    fit is the converged propensity MLE, or None when the propensity scores
    are known (score terms are then omitted). b_hat is the bias estimate to
    re-center the trimmed values with (0 when none was applied). theta_hat,
    null_value and level feed the t-statistic and confidence interval of
    the returned report.
    """
    n = zseries.n
    if not 1 <= k < n:
        raise FractileError(f"trim fractile k={k} outside [1, {n - 1}]")
    abs_centered = np.abs(zseries.centered)
    threshold = float(abs_centered[zseries.abs_order[k - 1]])
    keep = abs_centered < threshold
    core = zseries.centered * keep + ((n - k) / n) * b_hat

    d_hat_vec = None
    if fit is not None:
        if not fit.converged:
            raise NotConvergedError("variance estimation needs a converged propensity fit")
        scores = score_matrix(sample, fit)
        info = scores.T @ scores / n
        if np.linalg.cond(info) > CONDITION_LIMIT:
            raise SingularMatrixError("empirical information matrix is numerically singular")
        d_hat_vec = -(scores * (zseries.z * keep)[:, None]).sum(axis=0) / n
        w = np.linalg.solve(info, scores.T).T  # row i is the influence of S_i
        core = core + w @ d_hat_vec

    v_hat_sq = float((core**2).sum() / (n - k))
    std_error = math.sqrt(v_hat_sq / n)
    if v_hat_sq > 0.0:
        t_stat = t_statistic(theta_hat, null_value, v_hat_sq, n)
    else:
        t_stat = math.nan
    return InferenceReport(
        v_hat_sq=v_hat_sq,
        std_error=std_error,
        t_stat=t_stat,
        ci=confidence_interval(theta_hat, v_hat_sq, n, level),
        level=level,
        d_hat_vec=d_hat_vec,
    )


def t_statistic(theta_hat, null_value, v_hat_sq, n):
    """sqrt(n) (theta_hat - null_value) / sqrt(v_hat_sq)."""
    if v_hat_sq <= 0.0:
        raise DegenerateScaleError(f"v_hat_sq must be positive, got {v_hat_sq}")
    return math.sqrt(n) * (theta_hat - null_value) / math.sqrt(v_hat_sq)


def confidence_interval(theta_hat, v_hat_sq, n, level):
    """Normal-limit interval theta_hat -/+ z_(1+level)/2 * sqrt(v_hat_sq/n)."""
    if v_hat_sq < 0.0:
        raise DomainError(f"v_hat_sq must be nonnegative, got {v_hat_sq}")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0,1), got {level}")
    half = float(ndtri((1.0 + level) / 2.0)) * math.sqrt(v_hat_sq / n)
    return (theta_hat - half, theta_hat + half)
