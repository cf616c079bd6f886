"""Tail-index fitting and bias correction for the trim-by-z estimator.

Trimming a heavy, asymmetric z-series biases the trimmed mean by the mean
of the removed tail mass. Each tail of the centered series is fitted with
the Hill index and Hall scale estimators; a closed-form power-law
approximation of the removed mass is then added back. The tail-estimation
fractile m is chosen so the corrected estimate lands closest to the
untrimmed mean, and the correction is kept only when it actually moves the
estimate toward that target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateTailError, DomainError, FractileError, InfeasibleBiasError
from .estimators import EstimateReport, EstimatorTag, estimate_tz, nearest_int


class TailSide(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class TailFit:
    """Hill/Hall fit of one tail at fractile m.

    d_hat satisfies d_hat = (m/n) * order_stat_m**kappa_hat exactly.
    """

    side: TailSide
    m: int
    kappa_hat: float
    d_hat: float
    order_stat_m: float


@dataclass(frozen=True)
class BiasEstimate:
    """Outcome of the fractile search: the bias value, the fractile ratio
    phi_star that produced it, and the per-tail fits. feasible=False means
    no admissible fractile existed and value is 0."""

    value: float
    phi_star: float
    left: TailFit | None
    right: TailFit | None
    feasible: bool


def split_tails(zseries):
    """Split centered z into left-tail magnitudes and right-tail values,
    each sorted descending; zeros belong to neither tail."""
    centered = zseries.centered
    neg = np.sort(-centered[centered < 0.0])[::-1]
    pos = np.sort(centered[centered > 0.0])[::-1]
    return neg, pos


def hill_index(tail, m):
    """Hill estimator: inverse mean log-spacing of the top m tail values."""
    tail = np.asarray(tail, dtype=float)
    if m < 2:
        raise FractileError(f"hill fractile m={m} must be >= 2")
    if tail.shape[0] < m:
        raise FractileError(f"tail has {tail.shape[0]} observations, need {m}")
    anchor = float(tail[m - 1])
    if anchor <= 0.0:
        raise DomainError(f"tail order statistic {m} is {anchor}, must be positive")
    inverse = float(np.log(tail[: m - 1] / anchor).sum() / (m - 1))
    if inverse == 0.0:
        raise DegenerateTailError(f"top {m} tail values are identical; no log-spacing")
    return 1.0 / inverse


def hall_scale(tail_m_value, m, n, kappa_hat):
    """Hall scale estimator (m/n) * tail_m_value**kappa_hat."""
    if tail_m_value <= 0.0 or kappa_hat <= 0.0:
        raise DomainError("tail_m_value and kappa_hat must be positive")
    if m > n:
        raise DomainError(f"m={m} exceeds n={n}")
    return (m / n) * tail_m_value**kappa_hat


def fit_tail(tail, m, n, side):
    """Fit one tail at fractile m: Hill index plus Hall scale."""
    kappa = hill_index(tail, m)
    anchor = float(tail[m - 1])
    return TailFit(
        side=side,
        m=m,
        kappa_hat=kappa,
        d_hat=hall_scale(anchor, m, n, kappa),
        order_stat_m=anchor,
    )


def bias_approximation(n, k, kappa1, kappa2, d1, d2):
    """Closed-form trimming bias for power-law tails with the given
    per-tail indices and scales (left = 1, right = 2)."""
    if kappa1 <= 1.0 or kappa2 <= 1.0:
        raise InfeasibleBiasError(
            f"tail indices must exceed 1 for the mean to exist, got ({kappa1}, {kappa2})"
        )
    if d1 <= 0.0 or d2 <= 0.0:
        raise DomainError(f"tail scales must be positive, got ({d1}, {d2})")
    if not 1 <= k < n:
        raise FractileError(f"trim fractile k={k} outside [1, {n - 1}]")
    ratio = k / n
    right = d2 ** (1.0 / kappa2) * (kappa2 / (kappa2 - 1.0)) * ratio ** (1.0 - 1.0 / kappa2)
    left = d1 ** (1.0 / kappa1) * (kappa1 / (kappa1 - 1.0)) * ratio ** (1.0 - 1.0 / kappa1)
    return (n / (n - k)) * (right - left)


def bias_estimate(n, k, left, right):
    """Plug-in bias: the closed form evaluated at fitted tail parameters."""
    return bias_approximation(n, k, left.kappa_hat, right.kappa_hat, left.d_hat, right.d_hat)


def _tail_scan(tail, m_values, n):
    """Hill inverse index and d**(1/kappa) for every fractile in m_values.

    One cumulative-sum pass over the top of the tail; m_values must be >= 2
    and <= len(tail). d**(1/kappa) is computed as (m/n)**kappa_inv * anchor,
    which equals the Hall scale raised to 1/kappa without overflow.
    """
    top = np.log(tail[: int(m_values.max())])
    csum = np.cumsum(top)
    anchors_log = top[m_values - 1]
    kappa_inv = (csum[m_values - 2] - (m_values - 1) * anchors_log) / (m_values - 1)
    d_root = (m_values / n) ** kappa_inv * tail[m_values - 1]
    return kappa_inv, d_root


def select_phi(zseries, k, phi_range=(2.0, 16.0)):
    """Search the fractile grid for the bias value that best re-centers the
    trimmed estimate on the untrimmed mean.

    Candidates are the distinct integers m = round(phi * ln n) for phi in
    phi_range. A candidate is admissible when both tails hold at least m
    observations, neither Hill fit is degenerate, and both fitted indices
    exceed 1. Among admissible candidates the one minimizing
    |theta_tz + bias(m) - mean_z| wins, ties going to the smaller m.
    """
    n = zseries.n
    theta_tz = estimate_tz(zseries, k).theta_hat
    target = zseries.mean_z
    log_n = math.log(n)
    phi_lo, phi_hi = phi_range
    if not 0.0 < phi_lo <= phi_hi:
        raise DomainError(f"invalid phi_range {phi_range!r}")

    neg, pos = split_tails(zseries)
    m_lo = max(2, nearest_int(phi_lo * log_n))
    m_hi = min(nearest_int(phi_hi * log_n), neg.shape[0], pos.shape[0])
    if m_lo > m_hi:
        return BiasEstimate(value=0.0, phi_star=math.nan, left=None, right=None, feasible=False)

    m_values = np.arange(m_lo, m_hi + 1)
    kinv_neg, droot_neg = _tail_scan(neg, m_values, n)
    kinv_pos, droot_pos = _tail_scan(pos, m_values, n)
    admissible = (kinv_neg > 0.0) & (kinv_neg < 1.0) & (kinv_pos > 0.0) & (kinv_pos < 1.0)
    if not admissible.any():
        return BiasEstimate(value=0.0, phi_star=math.nan, left=None, right=None, feasible=False)

    ratio = k / n
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # inadmissible candidates may overflow here; they are masked below
        term_pos = droot_pos * ratio ** (1.0 - kinv_pos) / (1.0 - kinv_pos)
        term_neg = droot_neg * ratio ** (1.0 - kinv_neg) / (1.0 - kinv_neg)
        bias_values = (n / (n - k)) * (term_pos - term_neg)

    objective = np.abs(theta_tz + bias_values - target)
    objective[~admissible] = math.inf
    win = int(np.argmin(objective))  # first minimum: smallest m wins ties
    m_star = int(m_values[win])
    return BiasEstimate(
        value=float(bias_values[win]),
        phi_star=m_star / log_n,
        left=fit_tail(neg, m_star, n, TailSide.LEFT),
        right=fit_tail(pos, m_star, n, TailSide.RIGHT),
        feasible=True,
    )


def apply_bias_switch(theta_tz, theta_untrimmed, b_hat):
    """Keep the correction only when it strictly improves proximity to the
    untrimmed mean; returns (estimate, correction actually applied)."""
    corrected = theta_tz + b_hat
    if abs(corrected - theta_untrimmed) < abs(theta_tz - theta_untrimmed):
        return corrected, b_hat
    return theta_tz, 0.0


def estimate_tzo(zseries, k, phi_range=(2.0, 16.0)):
    """Bias-corrected trim-by-z estimator with the proximity switch."""
    base = estimate_tz(zseries, k)
    bias = select_phi(zseries, k, phi_range)
    if bias.feasible:
        theta, applied = apply_bias_switch(base.theta_hat, zseries.mean_z, bias.value)
    else:
        theta, applied = base.theta_hat, 0.0
    diagnostics = {"bias_feasible": bias.feasible, "bias_value": bias.value}
    if bias.feasible:
        diagnostics.update(
            phi_star=bias.phi_star,
            m_star=bias.left.m,
            kappa_left=bias.left.kappa_hat,
            kappa_right=bias.right.kappa_hat,
        )
    return EstimateReport(
        EstimatorTag.TZO,
        theta_hat=theta,
        bias_correction=applied,
        trimmed_count=base.trimmed_count,
        trimmed_fraction=base.trimmed_fraction,
        threshold=base.threshold,
        diagnostics=diagnostics,
    )
