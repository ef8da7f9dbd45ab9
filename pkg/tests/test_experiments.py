import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brute import brute_predict_many, brute_variance_many
from rejectreg.core import (
    STREAM_REP,
    FeatureSet,
    GridInfeasibleError,
    LabeledDataset,
    TooSmallError,
    derive_seed,
)
from rejectreg.experiments import (
    CvSpec,
    SplitSpec,
    calibration_study,
    default_lambda_grid,
    fit_knn,
    fit_loglog,
    lambda_sweep,
    rate_k,
    rate_study,
    run_epsilon_grid,
    select_k,
    split,
)
from rejectreg.knn import knn_fit
from rejectreg.oracle import CONSTANT, SINE_1D, sample


def _data(n, seed=0, d=2):
    g = np.random.default_rng(seed)
    return LabeledDataset(g.random((n, d)), g.normal(size=n))


# -- splits -----------------------------------------------------------------

def test_split_sizes_small():
    tr, cal, te = split(_data(10))
    assert (tr.n, cal.n, te.n) == (5, 2, 3)
    assert isinstance(cal, FeatureSet)


def test_split_is_a_partition_and_deterministic():
    data = _data(97)
    a = split(data, SplitSpec(seed=4))
    b = split(data, SplitSpec(seed=4))
    for x, y in zip(a, b):
        assert np.array_equal(x.X, y.X)
    rows = np.vstack([a[0].X, a[1].X, a[2].X])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, data.X))


def test_split_sizes_are_exact_over_seeds():
    data = _data(1000)
    for s in range(200):
        tr, cal, te = split(data, SplitSpec(seed=s))
        assert (tr.n, cal.n, te.n) == (500, 200, 300)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10_000), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_split_sizes_sum(n, a, b):
    if a + b >= 0.95:
        return
    sizes = SplitSpec((a, b, 1 - a - b)).sizes(n)
    assert sum(sizes) == n and min(sizes[:2]) >= 0
    assert sizes[0] == math.floor(a * n + 1e-9)


def test_split_too_small():
    with pytest.raises(TooSmallError):
        split(_data(3))


@pytest.mark.parametrize("fr", [(0.5, 0.5), (0.5, 0.2, 0.2), (0.0, 0.5, 0.5), (0.6, 0.6, -0.2)])
def test_split_spec_validation(fr):
    with pytest.raises(ValueError):
        SplitSpec(fr)


# -- cross-validation -------------------------------------------------------

def test_constant_function_prefers_large_k():
    g = np.random.default_rng(1)
    X = g.random((1000, 1))
    sel = select_k(LabeledDataset(X, 3.0 + g.normal(size=1000)), seed=1)
    assert sel.k_f >= 70


def test_step_function_prefers_small_k():
    g = np.random.default_rng(2)
    X = g.random((1000, 1))
    y = np.where(X[:, 0] > 0.5, 10.0, 0.0) + 0.05 * g.normal(size=1000)
    assert select_k(LabeledDataset(X, y), seed=2).k_f <= 10


def test_single_value_grid():
    sel = select_k(_data(100), CvSpec(k_grid=(5,)))
    assert (sel.k_f, sel.k_sigma) == (5, 5)


def test_infeasible_grid(caplog):
    with pytest.raises(GridInfeasibleError):
        select_k(_data(20), CvSpec(k_grid=(50, 100)))
    with pytest.raises(GridInfeasibleError):
        select_k(_data(5), CvSpec(folds=10))
    with caplog.at_level(logging.WARNING):
        sel = select_k(_data(40), CvSpec(k_grid=(5, 10, 50)))
    assert sel.grid == (5, 10) and "dropping" in caplog.text


def test_shared_k_flag():
    data = sample(SINE_1D, 400, 3)
    sel = select_k(data, CvSpec(shared_k=True))
    assert sel.k_f == sel.k_sigma


def test_cv_scores_match_direct_refit():
    data = sample(SINE_1D, 120, 9)
    spec = CvSpec(folds=4, k_grid=(3, 8))
    sel = select_k(data, spec, seed=5)
    # independent recomputation of the regression scores with brute-force kNN
    from rejectreg.core import STREAM_CV, make_rng
    perm = make_rng(5, STREAM_CV).permutation(data.n)
    folds = np.array_split(perm, 4)
    for j, k in enumerate((3, 8)):
        oof = np.empty(data.n)
        for val in folds:
            tr = np.sort(np.setdiff1d(perm, val))
            oof[val] = brute_predict_many(data.X[tr], data.y[tr], data.X[val], k)
        assert sel.mse_f[j] == pytest.approx(np.mean((oof - data.y) ** 2), rel=1e-12)


def test_fit_knn_forms():
    data = sample(SINE_1D, 200, 0)
    m, sel = fit_knn(data, 7)
    assert (m.k, m.k_sigma, sel) == (7, 7, None)
    m, _ = fit_knn(data, (4, 9))
    assert (m.k, m.k_sigma) == (4, 9)
    m, sel = fit_knn(data, cv=CvSpec(k_grid=(5, 10)))
    assert (m.k, m.k_sigma) == (sel.k_f, sel.k_sigma)


# -- epsilon grid -----------------------------------------------------------

def test_zero_epsilon_row_is_plain_knn():
    data = sample(SINE_1D, 300, 2)
    rep = run_epsilon_grid(data, (0.0, 0.5), reps=3, seed=7, k=6)
    for r in range(3):
        tr, _, te = split(data, SplitSpec(seed=derive_seed(7, STREAM_REP, r)))
        mse = np.mean((np.array(brute_predict_many(tr.X, tr.y, te.X, 6)) - te.y) ** 2)
        row = [x for x in rep.rows if x[0] == r and x[1] == 0.0][0]
        assert row[3] == 0.0
        assert row[2] == pytest.approx(mse, rel=1e-12)


def test_report_schema_and_aggregates():
    rep = run_epsilon_grid(sample(SINE_1D, 200, 1), (0.0, 0.3), reps=4, seed=1,
                           cv=CvSpec(k_grid=(5, 10)))
    assert rep.reps == 4 and len(rep.rows) == 8
    lines = rep.to_csv().splitlines()
    assert lines[0] == "epsilon,err_mean,err_std,accept_rate_mean,accept_rate_std"
    assert len(lines) == 3
    s = rep.summary()[1]
    acc = 1 - rep.column(0.3, "reject_rate")
    assert s["accept_rate_mean"] == acc.mean() and s["accept_rate_std"] == acc.std(ddof=1)
    assert rep.metadata["seed"] == 1 and rep.metadata["reps"] == 4
    assert rep.rows_csv().splitlines()[0].startswith("rep,epsilon,err_accepted")


def test_epsilon_grid_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        run_epsilon_grid(_data(50), (0.2, 1.0), reps=1)


def test_error_falls_with_epsilon():
    rep = run_epsilon_grid(sample(SINE_1D, 600, 4), (0.0, 0.2, 0.5, 0.8), reps=10, seed=2,
                           cv=CvSpec(k_grid=(10, 20, 30)))
    s = rep.summary()
    for a, b in zip(s, s[1:]):
        assert b["err_mean"] <= a["err_mean"] + 2 * max(a["err_std"], b["err_std"])
    assert s[-1]["err_mean"] < s[0]["err_mean"]
    for row in s:
        assert abs(row["accept_rate_mean"] - (1 - row["epsilon"])) < 0.1


def test_epsilon_grid_parallel_matches_serial():
    data = sample(SINE_1D, 200, 3)
    a = run_epsilon_grid(data, (0.0, 0.5), reps=3, seed=5, k=5, jobs=1)
    b = run_epsilon_grid(data, (0.0, 0.5), reps=3, seed=5, k=5, jobs=2)
    assert a.rows_csv() == b.rows_csv()


# -- lambda sweep -----------------------------------------------------------

def _sweep_setup():
    data = sample(SINE_1D, 600, 6)
    tr, cal, te = split(data, SplitSpec(seed=1))
    return knn_fit(tr, 10), cal, te


def test_sweep_extremes():
    model, cal, te = _sweep_setup()
    s2 = model.variance(te.X)
    assert s2.min() > 0
    rep = lambda_sweep(model, cal, te, [0.0, float(s2.max())])
    assert rep.reject_rate[0] == 1.0 and np.isnan(rep.err[0])
    assert rep.reject_rate[1] == 0.0
    mse = np.mean((np.array(brute_predict_many(model.data.X, model.data.y, te.X, 10)) - te.y) ** 2)
    assert rep.err[1] == pytest.approx(mse, rel=1e-12)
    assert rep.risk[0] == 0.0


def test_sweep_is_monotone_and_matches_rule():
    model, cal, te = _sweep_setup()
    rep = lambda_sweep(model, cal, te)
    assert rep.lambdas.size == 50
    assert np.all(np.diff(rep.reject_rate) <= 0)
    assert np.all(np.diff(rep.n_accepted) >= 0)
    s2 = np.array(brute_variance_many(model.data.X, model.data.y, te.X, 10, 10))
    for lam, n in zip(rep.lambdas, rep.n_accepted):
        assert n == np.count_nonzero(s2 <= lam)
    assert rep.to_csv().splitlines()[0] == "lambda,risk,err,reject_rate,n_accepted"


def test_sweep_validation():
    model, cal, te = _sweep_setup()
    with pytest.raises(ValueError):
        lambda_sweep(model, cal, te, [])
    with pytest.raises(ValueError):
        lambda_sweep(model, cal, te, [-1.0])


def test_default_grid():
    g = default_lambda_grid(np.array([0.0, 0.1, 1.0, 10.0]))
    assert g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(10.0) and g.size == 50
    assert default_lambda_grid(np.zeros(3)).tolist() == [0.0]


# -- rate and calibration studies -------------------------------------------

def test_rate_k_schedule():
    assert [rate_k(n, 1) for n in (200, 800, 3200)] == [34, 86, 217]
    assert rate_k(100, 2) == 10
    assert rate_k(3, 1, c=5) == 3


def test_loglog_fit_exact_power():
    n = np.array([10, 100, 1000, 10000])
    slope, (lo, hi) = fit_loglog(n, 3 * n ** -0.75)
    assert slope == pytest.approx(-0.75) and lo == pytest.approx(hi)
    with pytest.raises(ValueError):
        fit_loglog([1, 2], [1, 2])


def test_rate_study_report():
    rep = rate_study(SINE_1D, n_grid=(100, 200, 400), N=500, reps=3, mc_n=2000, seed=1)
    assert rep.excess.shape == (3, 3) and rep.k == (22, 34, 54)
    assert rep.u[0] == pytest.approx(100 ** (-1 / 3))
    lo, hi = rep.slope_ci
    assert lo <= rep.slope <= hi
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("n,k,u,excess_mean") and len(lines) == 4
    with pytest.raises(ValueError):
        rate_study(SINE_1D, n_grid=(100, 200), reps=1)


def test_rate_study_constant_variance():
    # sigma2 has an atom: only the regression term remains and smoothing keeps r near epsilon
    rep = rate_study(CONSTANT, n_grid=(200, 800, 3200), N=2000, reps=4, mc_n=10_000, seed=3)
    assert np.all(rep.mean_reject_gap < 0.05)
    assert rep.mean_excess[-1] < rep.mean_excess[0]


def test_calibration_gap_shrinks_like_root_n():
    rep = calibration_study(SINE_1D, n=500, N_grid=(1000, 2000, 4000), reps=20, mc_n=100_000, seed=1)
    slope, _ = fit_loglog(rep.N_grid, rep.mean_gap)
    assert -0.75 <= slope <= -0.3
    assert rep.mean_gap[-1] <= 2 / math.sqrt(4000)
