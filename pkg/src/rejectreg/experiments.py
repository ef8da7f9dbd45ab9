"""Experimental protocol: splits, cross-validated k, epsilon grids, lambda
sweeps, and Monte-Carlo rate and calibration studies."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .calibration import DEFAULT_U, EmpiricalCdf, build_cdf, calibrate_knn
from .core import (
    STREAM_CV,
    STREAM_MC,
    STREAM_REP,
    STREAM_SAMPLE,
    STREAM_SPLIT,
    STREAM_ZETA_CAL,
    STREAM_ZETA_QUERY,
    FeatureSet,
    GridInfeasibleError,
    LabeledDataset,
    TooSmallError,
    derive_seed,
    evaluate_arrays,
    make_rng,
)
from .knn import KnnModel, NeighborIndex
from .oracle import SyntheticModel, excess_risk_terms, lambda_for_epsilon, sample

log = logging.getLogger(__name__)

DEFAULT_K_GRID = (5, 10, 15, 20, 30, 50, 70, 100, 150)
DEFAULT_EPSILONS = tuple(i / 10 for i in range(10))


def fmt(x) -> str:
    """Locale-independent float formatting that round-trips exactly."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _run(fn, args_list, jobs: int):
    if jobs == 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    return Parallel(n_jobs=jobs)(delayed(fn)(*a) for a in args_list)


# ---------------------------------------------------------------------------
# splits and cross-validation

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.5, 0.2, 0.3)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) <= 0:
            raise ValueError(f"need three positive fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        # floor the first two, remainder goes to the test split
        n_train = int(math.floor(self.fractions[0] * n + 1e-9))
        n_cal = int(math.floor(self.fractions[1] * n + 1e-9))
        return n_train, n_cal, n - n_train - n_cal


def split(data: LabeledDataset, spec: SplitSpec = SplitSpec()):
    """Random partition into labeled train, unlabeled calibration and test parts.

    Calibration labels are dropped.
    """
    sizes = spec.sizes(data.n)
    if min(sizes) < 1:
        raise TooSmallError(f"n={data.n} too small for split sizes {sizes}")
    perm = make_rng(spec.seed, STREAM_SPLIT).permutation(data.n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return data.subset(perm[:a]), FeatureSet(data.X[perm[a:b]]), data.subset(perm[b:])


@dataclass(frozen=True)
class CvSpec:
    folds: int = 10
    k_grid: tuple = DEFAULT_K_GRID
    shared_k: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if not self.k_grid or min(self.k_grid) < 1:
            raise ValueError(f"k grid must hold positive integers, got {self.k_grid}")


@dataclass(frozen=True)
class KSelection:
    k_f: int
    k_sigma: int
    grid: tuple
    mse_f: tuple
    mse_sigma: tuple


def _cum_means(values: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Means over the first ``k`` columns for each ``k`` in ``ks``; shape (len(ks), m)."""
    c = np.cumsum(values, axis=1)
    return (c[:, ks - 1] / ks).T


def select_k(train: LabeledDataset, spec: CvSpec = CvSpec(), seed: int = 0) -> KSelection:
    """Choose k for the regression and for the variance estimate by K-fold CV.

    The regression task scores out-of-fold predictions of ``Y``. The variance
    task scores the variance estimate (in-fold residuals at the chosen
    regression k) against out-of-fold squared residuals. Ties go to the
    smaller k. Grid values larger than the smallest training fold are dropped.
    """
    n = train.n
    if spec.folds > n:
        raise GridInfeasibleError(f"{spec.folds} folds for {n} points")
    perm = make_rng(seed, STREAM_CV).permutation(n)
    folds = np.array_split(perm, spec.folds)
    min_train = n - max(len(f) for f in folds)
    grid = np.array(sorted(set(int(k) for k in spec.k_grid)))
    feasible = grid[grid <= min_train]
    if feasible.size == 0:
        raise GridInfeasibleError(f"no k in {tuple(grid)} fits a training fold of {min_train}")
    if feasible.size < grid.size:
        log.warning("dropping k values above training-fold size %d: %s",
                    min_train, tuple(grid[grid > min_train]))
    kmax = int(feasible[-1])

    fitted = []
    oof = np.empty((feasible.size, n))
    for val in folds:
        tr = np.setdiff1d(perm, val, assume_unique=True)
        tr.sort()
        part = train.subset(tr)
        index = NeighborIndex(part.X)
        nbr = index.query(train.X[val], kmax)
        oof[:, val] = _cum_means(part.y[nbr], feasible)
        fitted.append((val, part, index, nbr))
    mse_f = ((oof - train.y[None, :]) ** 2).mean(axis=1)
    i_f = int(np.argmin(mse_f))
    k_f = int(feasible[i_f])

    if spec.shared_k:
        return KSelection(k_f, k_f, tuple(feasible), tuple(mse_f), ())
    target = (train.y - oof[i_f]) ** 2
    oof_s = np.empty((feasible.size, n))
    for val, part, index, nbr in fitted:
        model = KnnModel(part, k_f, index=index)
        oof_s[:, val] = _cum_means(model.sq_residuals_[nbr], feasible)
    mse_s = ((oof_s - target[None, :]) ** 2).mean(axis=1)
    k_s = int(feasible[int(np.argmin(mse_s))])
    return KSelection(k_f, k_s, tuple(feasible), tuple(mse_f), tuple(mse_s))


def fit_knn(train: LabeledDataset, k=None, cv: CvSpec = CvSpec(), seed: int = 0):
    """Fit a kNN model with ``k`` given as an int, a ``(k_f, k_sigma)`` pair, or by CV."""
    if k is None:
        sel = select_k(train, cv, seed)
        return KnnModel(train, sel.k_f, sel.k_sigma), sel
    k_f, k_s = (k, k) if np.isscalar(k) else k
    return KnnModel(train, int(k_f), int(k_s)), None


# ---------------------------------------------------------------------------
# epsilon grid

@dataclass
class ExperimentReport:
    """Per-(epsilon, repetition) results plus aggregates over repetitions."""

    epsilons: tuple
    rows: list  # (rep, epsilon, err_accepted or None, reject_rate, n_eval, n_accepted, k_f, k_sigma)
    metadata: dict = field(default_factory=dict)

    @property
    def reps(self) -> int:
        return len({r[0] for r in self.rows})

    def column(self, epsilon: float, name: str) -> np.ndarray:
        j = {"err": 2, "reject_rate": 3}[name]
        vals = [r[j] for r in self.rows if r[1] == epsilon]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    def summary(self) -> list[dict]:
        out = []
        for eps in self.epsilons:
            err = self.column(eps, "err")
            err = err[~np.isnan(err)]
            acc = 1.0 - self.column(eps, "reject_rate")
            out.append({
                "epsilon": eps,
                "err_mean": float(err.mean()) if err.size else math.nan,
                "err_std": float(err.std(ddof=1)) if err.size > 1 else math.nan,
                "accept_rate_mean": float(acc.mean()),
                "accept_rate_std": float(acc.std(ddof=1)) if acc.size > 1 else math.nan,
                "n_err": int(err.size),
            })
        return out

    def to_csv(self) -> str:
        """Aggregated table: one row per epsilon."""
        header = ["epsilon", "err_mean", "err_std", "accept_rate_mean", "accept_rate_std"]
        return _csv(header, ([s[h] for h in header] for s in self.summary()))

    def rows_csv(self) -> str:
        header = ["rep", "epsilon", "err_accepted", "reject_rate", "n_eval", "n_accepted", "k_f", "k_sigma"]
        return _csv(header, self.rows)


def _epsilon_grid_rep(data, epsilons, cv, rep, seed, fractions, u, k):
    rs = derive_seed(seed, STREAM_REP, rep)
    train, cal, test = split(data, SplitSpec(fractions, rs))
    model, _ = fit_knn(train, k, cv, rs)
    cdf = build_cdf(model.variance(cal.X), u, make_rng(rs, STREAM_ZETA_CAL))
    f, s2 = model.predict_with_variance(test.X)
    scores = s2 + make_rng(rs, STREAM_ZETA_QUERY).uniform(0.0, u, size=test.n)
    rows = []
    for eps in epsilons:
        rep_ = evaluate_arrays(cdf.accepts(scores, eps), f, test.y)
        rows.append((rep, eps, rep_.err_accepted, rep_.reject_rate, rep_.n_eval,
                     rep_.n_accepted, model.k, model.k_sigma))
    return rows


def run_epsilon_grid(data: LabeledDataset, epsilons=DEFAULT_EPSILONS, cv: CvSpec = CvSpec(),
                     reps: int = 100, seed: int = 0, fractions=(0.5, 0.2, 0.3),
                     u: float = DEFAULT_U, k=None, jobs: int = 1,
                     dataset_id: str = "") -> ExperimentReport:
    """Repeat split / CV / fit / calibrate / evaluate ``reps`` times.

    Every repetition draws a fresh split and fresh CV folds from its own
    stream; all epsilons of a repetition share the fitted model, calibration
    perturbations and test perturbations.
    """
    epsilons = tuple(float(e) for e in epsilons)
    for e in epsilons:
        if not 0.0 <= e < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {e}")
    SplitSpec(tuple(fractions))
    args = [(data, epsilons, cv, r, seed, tuple(fractions), u, k) for r in range(reps)]
    per_rep = _run(_epsilon_grid_rep, args, jobs)
    rows = [row for rep_rows in per_rep for row in rep_rows]
    rows.sort(key=lambda r: (r[0], epsilons.index(r[1])))
    meta = {"seed": seed, "reps": reps, "dataset": dataset_id, "u": u,
            "folds": cv.folds, "k_grid": list(cv.k_grid), "k": k,
            "fractions": list(fractions)}
    return ExperimentReport(epsilons, rows, meta)


# ---------------------------------------------------------------------------
# lambda sweep

@dataclass
class SweepReport:
    lambdas: np.ndarray
    risk: np.ndarray
    err: np.ndarray
    reject_rate: np.ndarray
    n_accepted: np.ndarray

    def to_csv(self) -> str:
        return _csv(["lambda", "risk", "err", "reject_rate", "n_accepted"],
                    zip(self.lambdas, self.risk, self.err, self.reject_rate, self.n_accepted))


def default_lambda_grid(cal_scores: np.ndarray, points: int = 50) -> np.ndarray:
    """Geometric grid spanning the positive calibration variance estimates."""
    pos = cal_scores[cal_scores > 0]
    if pos.size == 0:
        return np.zeros(1)
    lo, hi = float(pos.min()), float(pos.max())
    if lo == hi:
        return np.array([lo])
    return np.geomspace(lo, hi, points)


def lambda_sweep(model: KnnModel, cal: FeatureSet, test: LabeledDataset,
                 lambdas=None) -> SweepReport:
    """Penalized-form plug-in rule ``accept iff variance <= lambda`` over a grid."""
    if lambdas is None:
        lambdas = default_lambda_grid(model.variance(cal.X))
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.size == 0:
        raise ValueError("empty lambda grid")
    if (lambdas < 0).any():
        raise ValueError("lambdas must be nonnegative")
    f, s2 = model.predict_with_variance(test.X)
    risk, err, rej, nacc = [], [], [], []
    for lam in lambdas:
        r = evaluate_arrays(s2 <= lam, f, test.y, lam)
        risk.append(r.penalized_risk)
        err.append(math.nan if r.err_accepted is None else r.err_accepted)
        rej.append(r.reject_rate)
        nacc.append(r.n_accepted)
    rej = np.array(rej)
    order = np.argsort(lambdas, kind="stable")
    if np.any(np.diff(rej[order]) > 0):
        raise RuntimeError("rejection rate increased with lambda")
    return SweepReport(lambdas, np.array(risk), np.array(err), rej, np.array(nacc))


# ---------------------------------------------------------------------------
# Monte-Carlo studies on synthetic models

def rate_k(n: int, d: int, c: float = 1.0) -> int:
    return int(min(n, max(1, round(c * n ** (2.0 / (d + 2))))))


@dataclass
class RateStudyReport:
    n_grid: tuple
    epsilon: float
    N: int
    excess: np.ndarray  # (len(n_grid), reps)
    reject_gap: np.ndarray  # |r - epsilon|, same shape
    k: tuple
    u: tuple
    slope: float
    slope_ci: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def mean_excess(self) -> np.ndarray:
        return self.excess.mean(axis=1)

    @property
    def se_excess(self) -> np.ndarray:
        return self.excess.std(axis=1, ddof=1) / math.sqrt(self.excess.shape[1])

    @property
    def mean_reject_gap(self) -> np.ndarray:
        return self.reject_gap.mean(axis=1)

    def to_csv(self) -> str:
        header = ["n", "k", "u", "excess_mean", "excess_se", "reject_gap_mean",
                  "slope", "slope_ci_low", "slope_ci_high"]
        rows = [(n, k, u, m, s, g, self.slope, *self.slope_ci)
                for n, k, u, m, s, g in zip(self.n_grid, self.k, self.u, self.mean_excess,
                                            self.se_excess, self.mean_reject_gap)]
        return _csv(header, rows)


def fit_loglog(x, y, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Least-squares slope of log(y) on log(x) with a t-based confidence interval."""
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if x.size < 3:
        raise ValueError("need at least 3 points to fit a slope with an interval")
    res = stats.linregress(x, y)
    t = stats.t.ppf(0.5 + level / 2, x.size - 2)
    return float(res.slope), (float(res.slope - t * res.stderr), float(res.slope + t * res.stderr))


def _rate_rep(model, n, N, epsilon, lam, k, u, mc_n, seed, rep):
    rs = derive_seed(seed, STREAM_REP, n, rep)
    train = sample(model, n, make_rng(rs, STREAM_SAMPLE))
    cal = FeatureSet(model.sample_features(N, make_rng(rs, STREAM_SAMPLE, 1)))
    pred = calibrate_knn(KnnModel(train, k), cal, epsilon, u, rs)
    X = model.sample_features(mc_n, make_rng(rs, STREAM_MC))
    accept, values = pred.predict_batch(X)
    terms = excess_risk_terms(model, X, accept, values, lam)
    return float(terms.mean()), abs(1.0 - float(accept.mean()) - epsilon)


def rate_study(model: SyntheticModel, n_grid=(200, 800, 3200), N: int = 10_000,
               epsilon: float = 0.3, reps: int = 30, seed: int = 0, c: float = 1.0,
               u_scale: float = 1.0, mc_n: int = 20_000, jobs: int = 1) -> RateStudyReport:
    """Excess risk of the kNN plug-in predictor as the labeled size grows.

    For each ``n``: ``k = round(c * n**(2/(d+2)))`` and
    ``u = u_scale * n**(-1/(d+2))``. The excess risk is the Monte-Carlo
    closed form on ``mc_n`` fresh points at the exact threshold.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 3:
        raise ValueError("rate study needs at least 3 grid points")
    d = model.dimension
    lam = lambda_for_epsilon(model, epsilon, seed=seed).lambda_eps
    ks = tuple(rate_k(n, d, c) for n in n_grid)
    us = tuple(u_scale * n ** (-1.0 / (d + 2)) for n in n_grid)
    args = [(model, n, N, epsilon, lam, k, u, mc_n, seed, r)
            for n, k, u in zip(n_grid, ks, us) for r in range(reps)]
    res = np.array(_run(_rate_rep, args, jobs)).reshape(len(n_grid), reps, 2)
    excess, gap = res[..., 0], res[..., 1]
    slope, ci = fit_loglog(n_grid, excess.mean(axis=1))
    meta = {"model": model.name, "seed": seed, "reps": reps, "c": c, "u_scale": u_scale, "mc_n": mc_n}
    return RateStudyReport(n_grid, epsilon, N, excess, gap, ks, us, slope, ci, meta)


@dataclass
class CalibrationStudyReport:
    N_grid: tuple
    epsilons: tuple
    gap: np.ndarray  # |r - epsilon|, shape (len(N_grid), len(epsilons), reps)

    @property
    def mean_gap(self) -> np.ndarray:
        """Mean over epsilons and repetitions, one value per N."""
        return self.gap.mean(axis=(1, 2))

    @property
    def se_gap(self) -> np.ndarray:
        per_rep = self.gap.mean(axis=1)
        return per_rep.std(axis=1, ddof=1) / math.sqrt(per_rep.shape[1])


def _calibration_rep(model, n, N_grid, epsilons, k, u, mc_n, seed, rep):
    rs = derive_seed(seed, STREAM_REP, rep)
    train = sample(model, n, make_rng(rs, STREAM_SAMPLE))
    knn = KnnModel(train, k)
    Xmc = model.sample_features(mc_n, make_rng(rs, STREAM_MC))
    scores = knn.variance(Xmc) + make_rng(rs, STREAM_ZETA_QUERY).uniform(0.0, u, size=mc_n)
    out = np.empty((len(N_grid), len(epsilons)))
    for i, N in enumerate(N_grid):
        cal = model.sample_features(N, make_rng(rs, STREAM_SAMPLE, 1 + i))
        cdf = build_cdf(knn.variance(cal), u, make_rng(rs, STREAM_ZETA_CAL, i))
        for j, eps in enumerate(epsilons):
            out[i, j] = abs(1.0 - cdf.accepts(scores, eps).mean() - eps)
    return out


def calibration_study(model: SyntheticModel, n: int = 2000, N_grid=(250, 1000, 4000),
                      epsilons=(0.1, 0.3, 0.5, 0.8), reps: int = 50, seed: int = 0,
                      k: int | None = None, u: float = DEFAULT_U, mc_n: int = 100_000,
                      jobs: int = 1) -> CalibrationStudyReport:
    """Gap between the true rejection rate and its target as the unlabeled size grows.

    The rejection rate of each calibrated predictor is estimated on ``mc_n``
    fresh points; ``k`` defaults to the rate schedule ``n**(2/(d+2))``.
    """
    k = rate_k(n, model.dimension) if k is None else k
    args = [(model, n, tuple(N_grid), tuple(epsilons), k, u, mc_n, seed, r) for r in range(reps)]
    gap = np.stack(_run(_calibration_rep, args, jobs), axis=-1)
    return CalibrationStudyReport(tuple(N_grid), tuple(epsilons), gap)
