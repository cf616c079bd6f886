import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttipw.errors import DegenerateProbabilityError, DomainError, SeparationError
from ttipw.propensity import (
    LaplaceKinkWarning,
    LinkFamily,
    PropensityFit,
    fit_mle,
    link_derivative,
    link_eval,
    score,
    score_matrix,
)
from ttipw.sample import Sample

SQRT2 = math.sqrt(2.0)


def make_sample(y, d, x, names=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != len(y):
        x = x.T
    names = names or ("y", "d") + tuple(f"x{j}" for j in range(x.shape[1]))
    return Sample(y=np.asarray(y, float), d=np.asarray(d, int), x=x, column_names=names)


def logistic_sample(n, gamma, seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    p = 1.0 / (1.0 + np.exp(-(x @ gamma)))
    d = (rng.random(n) < p).astype(int)
    return make_sample(rng.normal(size=n), d, x, names=("y", "d", "const", "x"))


# --- links -----------------------------------------------------------------


def test_link_eval_at_zero_is_half():
    for family in LinkFamily:
        assert link_eval(family, 0.0) == pytest.approx(0.5, abs=1e-15)


def test_laplace_link_values():
    assert link_eval(LinkFamily.LAPLACE, 1.0) == pytest.approx(1.0 - 0.5 * math.exp(-SQRT2), rel=1e-14)
    assert link_eval(LinkFamily.LAPLACE, -1.0) == pytest.approx(0.5 * math.exp(-SQRT2), rel=1e-14)


def test_probit_matches_high_precision_cdf():
    mpmath = pytest.importorskip("mpmath")
    for index in (-8.0, -3.2, -0.7, 0.0, 1.1, 4.5, 7.9):
        expected = float(mpmath.ncdf(index))
        assert abs(link_eval(LinkFamily.PROBIT, index) - expected) <= 1e-12


def test_link_eval_rejects_nonfinite():
    with pytest.raises(DomainError):
        link_eval(LinkFamily.LOGIT, math.inf)


def test_links_are_probabilities_and_monotone():
    # upper bounds sit where each CDF last stays below 1.0 in double
    # precision (probit saturates past 8.3, Laplace past 26)
    ranges = {
        LinkFamily.LOGIT: (-30.0, 30.0),
        LinkFamily.PROBIT: (-37.0, 8.2),
        LinkFamily.LAPLACE: (-30.0, 25.5),
    }
    for family, (lo, hi) in ranges.items():
        p = link_eval(family, np.linspace(lo, hi, 2001))
        assert np.all(p > 0.0) and np.all(p < 1.0)
        assert np.all(np.diff(p) >= 0.0)


def test_link_derivative_values():
    assert link_derivative(LinkFamily.LOGIT, 0.0) == pytest.approx(0.25, abs=1e-15)
    assert link_derivative(LinkFamily.PROBIT, 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-14)
    assert link_derivative(LinkFamily.LAPLACE, -1.0) == pytest.approx((SQRT2 / 2) * math.exp(-SQRT2), rel=1e-14)


def test_laplace_derivative_kink_warns():
    with pytest.warns(LaplaceKinkWarning):
        value = link_derivative(LinkFamily.LAPLACE, 0.0)
    assert value == pytest.approx(SQRT2 / 2, rel=1e-15)


def test_link_derivative_matches_central_differences():
    # step balances truncation against cancellation in the CDF difference
    step = 2e-4
    grid = [v for v in np.linspace(-5.0, 5.0, 81) if abs(v) > 1e-3]
    for family in LinkFamily:
        for index in grid:
            numeric = (link_eval(family, index + step) - link_eval(family, index - step)) / (2 * step)
            analytic = link_derivative(family, index)
            assert numeric == pytest.approx(analytic, rel=1e-6)


@given(
    p=st.floats(min_value=1e-8, max_value=1.0 - 1e-8),
    d=st.sampled_from([0, 1]),
)
def test_weight_identity_two_forms_agree(p, d):
    direct = d / p - (1 - d) / (1 - p)
    ratio = (d - p) / (p * (1 - p))
    assert abs(direct - ratio) <= 1e-12 * abs(ratio)


# --- MLE -------------------------------------------------------------------


def test_fit_mle_independent_treatment_recovers_marginal_rate():
    sample = logistic_sample(400, np.array([0.3, 0.0]), seed=1)
    fit = fit_mle(sample, LinkFamily.LOGIT)
    assert fit.converged
    assert fit.grad_norm <= 1e-8
    rate = sample.d.mean()
    assert fit.gamma_hat[0] == pytest.approx(math.log(rate / (1 - rate)), abs=5e-2)
    assert abs(fit.gamma_hat[1]) < 0.2


def test_fit_mle_matches_grid_search():
    sample = logistic_sample(40, np.array([0.25, 0.75]), seed=7)
    fit = fit_mle(sample, LinkFamily.LOGIT)
    assert fit.converged

    def loglik(gamma):
        index = sample.x @ gamma
        p = 1.0 / (1.0 + np.exp(-index))
        return float(np.sum(sample.d * np.log(p) + (1 - sample.d) * np.log(1 - p)))

    # coarse-to-fine grid maximization; the log-likelihood is strictly concave
    def grid_max(center, width, step):
        axis = np.arange(-width, width + step / 2, step)
        best, best_ll = None, -math.inf
        for da in axis:
            for db in axis:
                g = center + np.array([da, db])
                ll = loglik(g)
                if ll > best_ll:
                    best, best_ll = g, ll
        return best

    coarse = grid_max(np.zeros(2), 2.5, 0.05)
    fine = grid_max(coarse, 0.06, 1e-3)
    assert np.all(np.abs(fit.gamma_hat - fine) <= 2e-3)


def test_fit_mle_ascends_from_init():
    sample = logistic_sample(120, np.array([-0.2, 1.1]), seed=3)
    fit = fit_mle(sample, LinkFamily.LOGIT)
    loglik_at_zero = sample.n * math.log(0.5)
    assert fit.loglik >= loglik_at_zero


def test_fit_mle_detects_separation():
    x = np.column_stack([np.ones(8), np.array([-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0])])
    d = (x[:, 1] > 0).astype(int)
    sample = make_sample(np.zeros(8), d, x)
    with pytest.raises(SeparationError):
        fit_mle(sample, LinkFamily.LOGIT)


def test_fit_mle_singular_information():
    from ttipw.errors import SingularMatrixError

    rng = np.random.default_rng(14)
    column = rng.normal(size=40)
    x = np.column_stack([column, column])  # perfectly collinear
    d = (rng.random(40) < 0.5).astype(int)
    sample = make_sample(rng.normal(size=40), d, x)
    with pytest.raises(SingularMatrixError):
        fit_mle(sample, LinkFamily.LOGIT)


def test_fit_mle_max_iter_returns_unconverged_with_warning():
    sample = logistic_sample(200, np.array([0.4, 1.3]), seed=15)
    with pytest.warns(UserWarning, match="did not converge"):
        fit = fit_mle(sample, LinkFamily.LOGIT, max_iter=1)
    assert not fit.converged
    assert fit.iterations == 1


def test_fit_mle_bad_init_length():
    sample = logistic_sample(50, np.array([0.0, 0.5]), seed=5)
    with pytest.raises(DomainError):
        fit_mle(sample, LinkFamily.LOGIT, init=np.zeros(3))


@pytest.mark.parametrize("family", list(LinkFamily))
def test_fit_mle_converges_for_every_link(family):
    rng = np.random.default_rng(11)
    n = 300
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    index = x @ np.array([0.25, 1.0])
    from ttipw.propensity import link_eval as le

    d = (rng.random(n) < le(family, index)).astype(int)
    sample = make_sample(rng.normal(size=n), d, x)
    fit = fit_mle(sample, family)
    assert fit.converged
    assert np.all(fit.probs > 0) and np.all(fit.probs < 1)
    assert abs(np.abs(score_matrix(sample, fit).mean(axis=0)).max()) <= 1e-8


# --- score -----------------------------------------------------------------


def fixed_fit(family, gamma, probs):
    return PropensityFit(
        family=family,
        gamma_hat=np.asarray(gamma, float),
        loglik=0.0,
        iterations=0,
        converged=True,
        probs=np.asarray(probs, float),
        grad_norm=0.0,
    )


def test_score_logit_half_probability():
    sample = make_sample([1.0, 1.0], [1, 0], np.array([[1.0], [1.0]]))
    fit = fixed_fit(LinkFamily.LOGIT, [0.0], [0.5, 0.5])
    assert score(sample, fit, 0).tolist() == pytest.approx([0.5], rel=1e-12)


def test_score_logit_two_covariates():
    index = math.log(0.9 / 0.1)
    sample = make_sample([1.0, 1.0], [0, 1], np.array([[1.0, 2.0], [1.0, 2.0]]))
    fit = fixed_fit(LinkFamily.LOGIT, [index / 3.0, index / 3.0], [0.9, 0.9])
    got = score(sample, fit, 0)
    assert got == pytest.approx([-0.9, -1.8], rel=1e-12)


def test_score_mean_is_zero_at_mle():
    sample = logistic_sample(200, np.array([0.1, 0.6]), seed=9)
    fit = fit_mle(sample, LinkFamily.LOGIT)
    rows = np.array([score(sample, fit, i) for i in range(sample.n)])
    assert np.abs(rows.mean(axis=0)).max() <= 1e-8


def test_score_degenerate_probability_errors():
    sample = make_sample([1.0, 1.0], [1, 0], np.array([[1.0], [1.0]]))
    fit = fixed_fit(LinkFamily.LOGIT, [0.0], [1.0, 0.5])
    with pytest.raises(DegenerateProbabilityError):
        score(sample, fit, 0)
    with pytest.raises(DegenerateProbabilityError):
        score_matrix(sample, fit)
