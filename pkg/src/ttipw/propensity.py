"""Parametric propensity-score links and maximum-likelihood fitting.

Three link families map a linear index x'gamma to a treatment probability:
logit, probit, and the Laplace CDF. Fitting is Newton-Raphson on the
analytic score with an expected-information fallback and step-halving, so
the log-likelihood ascends monotonically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, log_expit, log_ndtr, ndtr

from .errors import DegenerateProbabilityError, DomainError, SeparationError, SingularMatrixError

SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Iterates whose sup-norm passes this bound sit within ~1e-21 of a degenerate
# probability for every link; further iteration only overflows.
SEPARATION_BOUND = 50.0

# A log-likelihood this close to 0 means every observation is classified
# essentially perfectly: the score tolerance can then be met at a finite
# iterate even though no interior maximizer exists.
_PERFECT_FIT_LOGLIK = -1e-6


class LinkFamily(Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    LAPLACE = "laplace"


class LaplaceKinkWarning(UserWarning):
    """The Laplace link derivative was requested at its index-0 kink."""


@dataclass(frozen=True)
class PropensityFit:
    """MLE output: coefficients, fitted probabilities, and diagnostics."""

    family: LinkFamily
    gamma_hat: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    probs: np.ndarray
    grad_norm: float


def _check_finite_index(index):
    if not np.all(np.isfinite(index)):
        raise DomainError("link index must be finite")


def link_eval(family, index):
    """Evaluate the link CDF at a (scalar or array) linear index."""
    index = np.asarray(index, dtype=float)
    _check_finite_index(index)
    if family is LinkFamily.LOGIT:
        p = expit(index)
    elif family is LinkFamily.PROBIT:
        p = ndtr(index)
    elif family is LinkFamily.LAPLACE:
        p = np.where(
            index <= 0.0,
            0.5 * np.exp(SQRT2 * np.minimum(index, 0.0)),
            1.0 - 0.5 * np.exp(-SQRT2 * np.maximum(index, 0.0)),
        )
    else:
        raise DomainError(f"unknown link family {family!r}")
    return float(p) if p.ndim == 0 else p


def link_derivative(family, index):
    """Derivative of the link CDF with respect to the index.

    The Laplace density has a kink at index 0; there the common one-sided
    value sqrt(2)/2 is returned and a LaplaceKinkWarning is issued.
    """
    index = np.asarray(index, dtype=float)
    _check_finite_index(index)
    if family is LinkFamily.LOGIT:
        p = expit(index)
        out = p * (1.0 - p)
    elif family is LinkFamily.PROBIT:
        out = np.exp(-0.5 * index**2 - _LOG_SQRT_2PI)
    elif family is LinkFamily.LAPLACE:
        if np.any(index == 0.0):
            warnings.warn(
                "Laplace link derivative evaluated at the index-0 kink",
                LaplaceKinkWarning,
                stacklevel=2,
            )
        out = (SQRT2 / 2.0) * np.exp(-SQRT2 * np.abs(index))
    else:
        raise DomainError(f"unknown link family {family!r}")
    return float(out) if out.ndim == 0 else out


def _laplace_log_cdf(index):
    out = np.where(
        index <= 0.0,
        math.log(0.5) + SQRT2 * np.minimum(index, 0.0),
        np.log1p(-0.5 * np.exp(-SQRT2 * np.maximum(index, 0.0))),
    )
    return out


def _log_likelihood(family, index, d):
    if family is LinkFamily.LOGIT:
        terms = d * log_expit(index) + (1 - d) * log_expit(-index)
    elif family is LinkFamily.PROBIT:
        terms = d * log_ndtr(index) + (1 - d) * log_ndtr(-index)
    else:
        terms = d * _laplace_log_cdf(index) + (1 - d) * _laplace_log_cdf(-index)
    return float(terms.sum())


def _score_scalars(family, index, d):
    """Per-observation score factor s_i with S_i = s_i * x_i, in a form that
    stays finite however extreme the index is."""
    if family is LinkFamily.LOGIT:
        return d - expit(index)
    if family is LinkFamily.PROBIT:
        log_phi = -0.5 * index**2 - _LOG_SQRT_2PI
        hazard1 = np.exp(log_phi - log_ndtr(index))  # phi/Phi
        hazard0 = np.exp(log_phi - log_ndtr(-index))  # phi/(1-Phi)
        return d * hazard1 - (1 - d) * hazard0
    # Laplace: dp/dindex = sqrt(2) * min(p, 1-p)
    q_pos = 0.5 * np.exp(-SQRT2 * np.abs(index))  # min(p, 1-p)
    ratio_near = q_pos / (1.0 - q_pos)  # min/max
    treated_factor = np.where(index <= 0.0, 1.0, ratio_near)
    control_factor = np.where(index >= 0.0, 1.0, ratio_near)
    return SQRT2 * (d * treated_factor - (1 - d) * control_factor)


def _expected_weights(family, index):
    """Fisher-information weights (dp/dindex)^2 / (p(1-p)); always positive."""
    if family is LinkFamily.LOGIT:
        p = expit(index)
        return p * (1.0 - p)
    if family is LinkFamily.PROBIT:
        log_phi = -0.5 * index**2 - _LOG_SQRT_2PI
        return np.exp(2.0 * log_phi - log_ndtr(index) - log_ndtr(-index))
    q = 0.5 * np.exp(-SQRT2 * np.abs(index))
    return 2.0 * q / (1.0 - q)


def _observed_weights(family, index, d):
    """Per-observation w_i with observed Hessian -sum w_i x_i x_i'."""
    if family is LinkFamily.LOGIT:
        p = expit(index)
        return p * (1.0 - p)
    if family is LinkFamily.PROBIT:
        log_phi = -0.5 * index**2 - _LOG_SQRT_2PI
        hazard1 = np.exp(log_phi - log_ndtr(index))
        hazard0 = np.exp(log_phi - log_ndtr(-index))
        return d * (hazard1**2 + index * hazard1) + (1 - d) * (hazard0**2 - index * hazard0)
    q = 0.5 * np.exp(-SQRT2 * np.abs(index))
    curvature = 2.0 * q / (1.0 - q) ** 2
    return np.where((d == 1) == (index > 0.0), curvature, 0.0)


def _solve_step(x, weights, grad):
    hess = x.T @ (weights[:, None] * x)
    try:
        step = np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(step)):
        return None
    return step


def fit_mle(sample, family, init=None, tol=1e-8, max_iter=100):
    """Maximize the binary-response log-likelihood over gamma.

    Converged means the mean score has max-norm <= tol. Iterates whose
    sup-norm exceeds SEPARATION_BOUND raise SeparationError; if neither the
    observed Hessian, the expected information, nor its ridge-regularized
    version yields a usable step, SingularMatrixError is raised. Hitting
    max_iter returns a fit flagged converged=False with a warning.
    """
    x = sample.x
    d = sample.d.astype(float)
    n, q = x.shape
    if init is None:
        gamma = np.zeros(q)
    else:
        gamma = np.asarray(init, dtype=float).copy()
        if gamma.shape != (q,):
            raise DomainError(f"init must have length {q}, got shape {gamma.shape}")

    index = x @ gamma
    loglik = _log_likelihood(family, index, d)
    iterations = 0
    converged = False
    grad_norm = math.inf

    for iterations in range(1, max_iter + 1):
        scalars = _score_scalars(family, index, d)
        grad = x.T @ scalars
        grad_norm = float(np.abs(grad).max()) / n
        if grad_norm <= tol:
            converged = True
            iterations -= 1
            break

        step = _solve_step(x, _observed_weights(family, index, d), grad)
        if step is None or float(grad @ step) <= 0.0:
            step = _solve_step(x, _expected_weights(family, index), grad)
        if step is None:
            ridged = _expected_weights(family, index) + 1e-10
            step = _solve_step(x, ridged, grad)
            if step is None:
                raise SingularMatrixError("information matrix singular at current iterate")

        scale = 1.0
        improved = False
        for _ in range(31):
            candidate = gamma + scale * step
            cand_index = x @ candidate
            cand_loglik = _log_likelihood(family, cand_index, d)
            if cand_loglik > loglik:
                improved = True
                break
            scale *= 0.5
        if not improved:
            warnings.warn("line search stalled before reaching score tolerance")
            break
        gamma, index, loglik = candidate, cand_index, cand_loglik
        if float(np.abs(gamma).max()) > SEPARATION_BOUND:
            raise SeparationError(
                "coefficients diverged past the separation bound; data are (quasi-)separated"
            )
    else:
        warnings.warn(f"MLE did not converge within {max_iter} iterations")
        scalars = _score_scalars(family, index, d)
        grad_norm = float(np.abs(x.T @ scalars).max()) / n

    if loglik > _PERFECT_FIT_LOGLIK:
        raise SeparationError(
            "log-likelihood reached 0 (every observation classified perfectly); "
            "data are (quasi-)separated"
        )
    return PropensityFit(
        family=family,
        gamma_hat=gamma,
        loglik=loglik,
        iterations=iterations,
        converged=converged,
        probs=link_eval(family, index),
        grad_norm=grad_norm,
    )


def score(sample, fit, i):
    """Score contribution S_i(gamma_hat) = h_i * dp/dindex * x_i."""
    if not 0 <= i < sample.n:
        raise DomainError(f"observation index {i} out of range for n={sample.n}")
    p = float(fit.probs[i])
    if p <= 0.0 or p >= 1.0:
        raise DegenerateProbabilityError(f"p[{i}] = {p} is 0 or 1 at machine precision")
    d = float(sample.d[i])
    h = (d - p) / (p * (1.0 - p))
    index = float(sample.x[i] @ fit.gamma_hat)
    return h * link_derivative(fit.family, index) * sample.x[i]


def score_matrix(sample, fit):
    """All score rows S_i(gamma_hat), (n, q), computed in a stable form."""
    probs = np.asarray(fit.probs, dtype=float)
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        bad = int(np.argmax((probs <= 0.0) | (probs >= 1.0)))
        raise DegenerateProbabilityError(f"p[{bad}] = {probs[bad]} is 0 or 1 at machine precision")
    index = sample.x @ fit.gamma_hat
    scalars = _score_scalars(fit.family, index, sample.d.astype(float))
    return scalars[:, None] * sample.x
