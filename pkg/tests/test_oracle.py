import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rejectreg.calibration import calibrate_knn
from rejectreg.core import Abstain, DimensionMismatchError, EpsilonOutOfRangeError, FeatureSet, Predict
from rejectreg.experiments import rate_study
from rejectreg.knn import knn_fit
from rejectreg.oracle import (
    CONSTANT,
    NORM_2D,
    SINE_1D,
    FunctionPredictor,
    OracleLambda,
    SyntheticModel,
    excess_risk,
    excess_risk_terms,
    lambda_for_epsilon,
    oracle_curve,
    oracle_for_epsilon,
    oracle_predict,
    rejection_rate,
    risk_difference_check,
    sample,
)

NOISELESS = SyntheticModel("noiseless", 1, f_star=lambda X: np.cos(X[:, 0]), sigma2=lambda X: np.zeros(len(X)))
WHITE = SyntheticModel("white", 1, f_star=lambda X: np.zeros(len(X)), sigma2=lambda X: np.ones(len(X)))
SQUARED = SyntheticModel("squared", 1, f_star=lambda X: X[:, 0], sigma2=lambda X: X[:, 0] ** 2)


def _shifted(model, lam, delta):
    return FunctionPredictor(lambda X: model.f_star(X) + delta, lambda X: model.sigma2(X) <= lam,
                             model.dimension)


# -- sampling ---------------------------------------------------------------

def test_noiseless_labels_equal_regression():
    d = sample(NOISELESS, 50, 3)
    assert np.array_equal(d.y, np.cos(d.X[:, 0]))


def test_sample_moments():
    n = 100_000
    y = sample(WHITE, n, 11).y
    assert abs(y.mean()) <= 4 / math.sqrt(n)
    assert abs(y.var() - 1.0) <= 0.05


def test_sample_is_deterministic():
    a, b = sample(NORM_2D, 100, 5), sample(NORM_2D, 100, 5)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.y, sample(NORM_2D, 100, 6).y)


def test_uniform_noise_is_bounded():
    m = SyntheticModel("u", 1, SINE_1D.f_star, SINE_1D.sigma2, noise="uniform")
    d = sample(m, 5000, 0)
    assert np.all(np.abs(d.y - SINE_1D.f_star(d.X)) <= np.sqrt(3 * d.X[:, 0]) + 1e-12)
    assert abs(np.mean((d.y - SINE_1D.f_star(d.X)) ** 2) - 0.5) < 0.03


def test_sample_rejects_nonpositive_n():
    with pytest.raises(ValueError):
        sample(SINE_1D, 0, 0)


# -- quantiles --------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.05, 0.3, 0.9])
def test_constant_variance_quantile(eps):
    le = lambda_for_epsilon(CONSTANT, eps)
    assert le.lambda_eps == 0.25 and le.degenerate
    mc = lambda_for_epsilon(CONSTANT, eps, mc_n=1000, analytic=False)
    assert mc.lambda_eps == 0.25 and mc.degenerate


def test_linear_variance_quantile():
    assert lambda_for_epsilon(SINE_1D, 0.3).lambda_eps == pytest.approx(0.7)
    mc = lambda_for_epsilon(SINE_1D, 0.3, analytic=False)
    assert not mc.analytic and mc.mc_std_error > 0
    assert abs(mc.lambda_eps - 0.7) <= 4 * mc.mc_std_error


def test_squared_variance_quantile():
    mc = lambda_for_epsilon(SQUARED, 0.19)
    assert abs(mc.lambda_eps - 0.6561) <= max(4 * mc.mc_std_error, 1e-3)


def test_norm2d_quantile_matches_monte_carlo():
    for eps in (0.1, 0.5, 0.8):
        exact = lambda_for_epsilon(NORM_2D, eps).lambda_eps
        mc = lambda_for_epsilon(NORM_2D, eps, analytic=False)
        assert abs(exact - mc.lambda_eps) <= 4 * mc.mc_std_error


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_quantile_epsilon_range(eps):
    with pytest.raises(EpsilonOutOfRangeError):
        lambda_for_epsilon(SINE_1D, eps)


# -- optimal predictors -----------------------------------------------------

def test_oracle_extremes():
    X = np.linspace(0.001, 1, 200).reshape(-1, 1)
    acc, vals = OracleLambda(SINE_1D, 1.0).predict_batch(X)
    assert acc.all() and np.array_equal(vals, SINE_1D.f_star(X))
    acc, vals = OracleLambda(SINE_1D, 0.0).predict_batch(X)
    assert not acc.any() and np.isnan(vals).all()


def test_oracle_single_point():
    o = OracleLambda(SINE_1D, 0.5)
    assert oracle_predict(o, [0.25]) == Predict(1.0)
    assert oracle_predict(o, [0.75]) is Abstain
    with pytest.raises(DimensionMismatchError):
        oracle_predict(OracleLambda(NORM_2D, 0.5), [0.1, 0.2, 0.3])


def test_oracle_reject_rate():
    r = rejection_rate(OracleLambda(SINE_1D, 0.7), SINE_1D, 100_000, seed=2)
    assert abs(r - 0.3) <= 4 * math.sqrt(0.21 / 100_000)


@pytest.mark.parametrize("model", [SINE_1D, NORM_2D])
@pytest.mark.parametrize("eps", [0.1, 0.4, 0.75])
def test_epsilon_oracle_rejects_epsilon(model, eps):
    n = 100_000
    r = rejection_rate(oracle_for_epsilon(model, eps), model, n, seed=4)
    assert abs(r - eps) <= 4 * math.sqrt(eps * (1 - eps) / n)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_accept_sets_are_nested(a, b, seed):
    lo, hi = min(a, b), max(a, b)
    X = np.random.default_rng(seed).random((300, 2))
    small = OracleLambda(NORM_2D, lo).accepts(X)
    large = OracleLambda(NORM_2D, hi).accepts(X)
    assert np.all(large[small])


def test_oracle_curve_shape():
    lams = np.linspace(0.0, 1.0, 11)
    c = oracle_curve(SINE_1D, lams, mc_n=20_000, seed=1)
    assert np.all(np.diff(c.reject_rate) <= 0)
    assert np.all(c.accept[1:] >= c.accept[:-1])
    # on model (i) Err at lam is E[sigma2 | sigma2 <= lam] = lam / 2
    ok = ~np.isnan(c.err)
    assert np.all(np.abs(c.err[ok] - lams[ok] / 2) <= 4 * c.err_se[ok] + 1e-3)


# -- excess risk ------------------------------------------------------------

@pytest.mark.parametrize("model", [SINE_1D, NORM_2D])
def test_excess_risk_of_oracle_is_zero(model):
    value, se = excess_risk(model, oracle_for_epsilon(model, 0.3), 0.3, mc_n=50_000)
    assert value == 0.0 and se == 0.0


@pytest.mark.parametrize("eps", [0.2, 0.6])
def test_excess_risk_of_shifted_oracle(eps):
    delta, n = 0.1, 100_000
    value, se = excess_risk(SINE_1D, _shifted(SINE_1D, 1 - eps, delta), eps, mc_n=n, seed=3)
    expected = delta ** 2 * (1 - eps)
    assert abs(value - expected) <= 4 * delta ** 2 * math.sqrt(eps * (1 - eps) / n)
    assert se > 0


def test_excess_risk_integrand_by_hand():
    X = np.array([[0.2], [0.5], [0.9]])
    accept = np.array([True, True, False])
    values = np.array([SINE_1D.f_star(X[:1])[0] + 0.5, 0.0, np.nan])
    terms = excess_risk_terms(SINE_1D, X, accept, values, lam=0.4)
    # point 1: regression gap only; point 2: wrongly accepted; point 3: correctly rejected
    f2 = SINE_1D.f_star(X[1:2])[0]
    assert terms == pytest.approx([0.25, f2 ** 2 + 0.1, 0.0])


def test_constant_model_has_no_decision_term(rng):
    X = rng.random((500, 1))
    accept = rng.random(500) < 0.5
    values = rng.normal(size=500)
    terms = excess_risk_terms(CONSTANT, X, accept, values, lam=0.25)
    assert np.allclose(terms, np.where(accept, (CONSTANT.f_star(X) - values) ** 2, 0.0))


def test_knn_excess_risk_decreases_in_n():
    rep = rate_study(SINE_1D, n_grid=(200, 800, 3200), N=2000, reps=5, mc_n=20_000, seed=8)
    m, se = rep.mean_excess, rep.se_excess
    for i in range(2):
        assert m[i + 1] < m[i] + 2 * math.hypot(se[i], se[i + 1])
    assert m[2] < m[0]


def test_excess_risk_input_checks():
    with pytest.raises(EpsilonOutOfRangeError):
        excess_risk(SINE_1D, OracleLambda(SINE_1D, 0.5), 1.0)
    with pytest.raises(ValueError):
        excess_risk(SINE_1D, OracleLambda(SINE_1D, 0.5), 0.5, mc_n=0)


# -- two-way agreement ------------------------------------------------------

def test_risk_check_oracle():
    c = risk_difference_check(SINE_1D, oracle_for_epsilon(SINE_1D, 0.3), 0.3, mc_n=20_000)
    assert c.direct == 0.0 and c.closed_form == 0.0 and c.agree


def test_risk_check_shifted():
    delta = 0.2
    c = risk_difference_check(NORM_2D, _shifted(NORM_2D, lambda_for_epsilon(NORM_2D, 0.4).lambda_eps, delta),
                              0.4, mc_n=50_000, seed=5)
    assert c.agree
    assert c.closed_form == pytest.approx(delta ** 2 * 0.6, rel=0.02)


def test_risk_check_knn():
    model = knn_fit(sample(SINE_1D, 500, 1), 25)
    cal = FeatureSet(SINE_1D.sample_features(2000, np.random.default_rng(2)))
    c = risk_difference_check(SINE_1D, calibrate_knn(model, cal, 0.3, seed=3), 0.3, mc_n=50_000, seed=4)
    assert c.agree and c.closed_form > 0
