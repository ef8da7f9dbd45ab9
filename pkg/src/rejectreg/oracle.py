"""Synthetic models with known regression and variance functions.

Provides the optimal threshold predictors, Monte-Carlo quantiles of the
conditional variance, and two independent estimates of the excess risk of a
predictor with reject option: a direct difference of penalized risks on
sampled labels, and the closed form that only needs the true functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np
from scipy.optimize import brentq

from .core import (
    STREAM_MC,
    STREAM_SAMPLE,
    Abstain,
    EpsilonOutOfRangeError,
    LabeledDataset,
    Predict,
    check_query,
    make_rng,
)


class RejectPredictor(Protocol):
    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class SyntheticModel:
    """``Y = f_star(X) + sigma(X) * xi`` with ``X`` uniform on a box.

    ``f_star`` and ``sigma2`` take an (m, d) array. ``noise`` is ``"gaussian"``
    (standard normal ``xi``) or ``"uniform"`` (unit-variance uniform ``xi``,
    for a bounded ``Y``). ``sigma2_quantile`` is the closed-form quantile
    function of ``sigma2(X)`` when known.
    """

    name: str
    dimension: int
    f_star: Callable[[np.ndarray], np.ndarray]
    sigma2: Callable[[np.ndarray], np.ndarray]
    low: float = 0.0
    high: float = 1.0
    noise: str = "gaussian"
    alpha: Optional[float] = None
    sigma2_quantile: Optional[Callable[[float], float]] = None

    def sample_features(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dimension))

    def sample_labels(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = X.shape[0]
        if self.noise == "gaussian":
            xi = rng.standard_normal(n)
        elif self.noise == "uniform":
            xi = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=n)
        else:
            raise ValueError(f"unknown noise law {self.noise!r}")
        return self.f_star(X) + np.sqrt(self.sigma2(X)) * xi


def _sine_1d(X):
    return np.sin(2 * np.pi * X[:, 0])


def _sine_2d(X):
    return np.sin(2 * np.pi * X[:, 0]) * np.cos(np.pi * X[:, 1])


def _first_coord(X):
    return X[:, 0].copy()


def _half_sq_norm(X):
    return 0.5 * (X[:, 0] ** 2 + X[:, 1] ** 2)


def _quarter(X):
    return np.full(X.shape[0], 0.25)


def _identity(p):
    return float(p)


def _quarter_quantile(p):
    return 0.25


def _norm2_cdf(s: float) -> float:
    """P(|X|^2 / 2 <= s) for X uniform on the unit square."""
    r2 = 2.0 * s
    if r2 <= 0:
        return 0.0
    if r2 <= 1:
        return math.pi * r2 / 4
    if r2 >= 2:
        return 1.0
    r = math.sqrt(r2)
    return math.sqrt(r2 - 1) + r2 * (math.pi / 4 - math.acos(1 / r))


def _norm2_quantile(p: float) -> float:
    return brentq(lambda s: _norm2_cdf(s) - p, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


SINE_1D = SyntheticModel(
    name="sine1d",
    dimension=1,
    f_star=_sine_1d,
    sigma2=_first_coord,
    alpha=1.0,
    sigma2_quantile=_identity,
)

NORM_2D = SyntheticModel(
    name="norm2d",
    dimension=2,
    f_star=_sine_2d,
    sigma2=_half_sq_norm,
    alpha=1.0,
    sigma2_quantile=_norm2_quantile,
)

# constant variance: the distribution of sigma2(X) has a single atom
CONSTANT = SyntheticModel(
    name="constant",
    dimension=1,
    f_star=_sine_1d,
    sigma2=_quarter,
    alpha=0.0,
    sigma2_quantile=_quarter_quantile,
)

MODELS = {m.name: m for m in (SINE_1D, NORM_2D, CONSTANT)}


def get_model(name: str) -> SyntheticModel:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown synthetic model {name!r}; choose from {sorted(MODELS)}") from None


def sample(model: SyntheticModel, n: int, seed: int | np.random.Generator) -> LabeledDataset:
    """Draw ``n`` i.i.d. labeled points; deterministic for a given seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, STREAM_SAMPLE)
    X = model.sample_features(n, rng)
    return LabeledDataset(X, model.sample_labels(X, rng))


# ---------------------------------------------------------------------------
# optimal predictors

@dataclass(frozen=True)
class OracleLambda:
    """Predict ``f_star(x)`` when ``sigma2(x) <= lam``, abstain otherwise."""

    model: SyntheticModel
    lam: float

    def accepts(self, X) -> np.ndarray:
        return self.model.sigma2(X) <= self.lam

    def predict_batch(self, X):
        X = check_query(X, self.model.dimension)
        accept = self.accepts(X)
        return accept, np.where(accept, self.model.f_star(X), np.nan)

    def predict(self, x):
        accept, values = self.predict_batch(x)
        if accept.shape[0] != 1:
            raise ValueError("predict takes a single point; use predict_batch")
        return Predict(float(values[0])) if accept[0] else Abstain


def oracle_predict(o: OracleLambda, x):
    return o.predict(x)


@dataclass(frozen=True)
class FunctionPredictor:
    """Predictor with reject option built from two plain functions."""

    regression: Callable[[np.ndarray], np.ndarray]
    accept: Callable[[np.ndarray], np.ndarray]
    dimension: int

    def predict_batch(self, X):
        X = check_query(X, self.dimension)
        acc = np.asarray(self.accept(X), dtype=bool)
        return acc, np.where(acc, self.regression(X), np.nan)


@dataclass(frozen=True)
class LambdaEpsilon:
    epsilon: float
    lambda_eps: float
    mc_std_error: float
    analytic: bool = False
    degenerate: bool = False


def _check_open_epsilon(epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise EpsilonOutOfRangeError(f"epsilon must lie in (0, 1), got {epsilon}")
    return float(epsilon)


def lambda_for_epsilon(model: SyntheticModel, epsilon: float, mc_n: int = 100_000,
                       seed: int = 0, analytic: bool = True) -> LambdaEpsilon:
    """The ``(1 - epsilon)``-quantile of ``sigma2(X)``.

    Uses the model's closed-form quantile when available and ``analytic`` is
    set; otherwise the generalized inverse of the empirical cdf of ``mc_n``
    draws, with an order-statistic standard error. ``degenerate`` flags an
    atom at the quantile (the continuity hypothesis fails there).
    """
    epsilon = _check_open_epsilon(epsilon)
    p = 1.0 - epsilon
    rng = make_rng(seed, STREAM_MC, 1)
    if analytic and model.sigma2_quantile is not None:
        lam = float(model.sigma2_quantile(p))
        # atom check on a small sample only
        s = model.sigma2(model.sample_features(1000, rng))
        return LambdaEpsilon(epsilon, lam, 0.0, True, int(np.count_nonzero(s == lam)) > 1)
    s = np.sort(model.sigma2(model.sample_features(mc_n, rng)))
    j = max(1, math.ceil(p * mc_n))
    lam = float(s[j - 1])
    degenerate = int(np.count_nonzero(s == lam)) > 1
    half = math.sqrt(mc_n * p * (1 - p))
    lo = min(mc_n - 1, max(0, math.floor(j - 1 - half)))
    hi = min(mc_n - 1, max(0, math.ceil(j - 1 + half)))
    return LambdaEpsilon(epsilon, lam, float(s[hi] - s[lo]) / 2.0, False, degenerate)


def oracle_for_epsilon(model: SyntheticModel, epsilon: float, **kwargs) -> OracleLambda:
    return OracleLambda(model, lambda_for_epsilon(model, epsilon, **kwargs).lambda_eps)


# ---------------------------------------------------------------------------
# risks

def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = v.shape[0]
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(v.mean()), se


def _resolve_lambda(model, epsilon, lam, seed):
    if lam is not None:
        return float(lam)
    return lambda_for_epsilon(model, epsilon, seed=seed).lambda_eps


def excess_risk_terms(model: SyntheticModel, X: np.ndarray, accept: np.ndarray,
                      values: np.ndarray, lam: float) -> np.ndarray:
    """Per-point closed-form excess-risk integrand at threshold ``lam``."""
    s2 = model.sigma2(X)
    reg = np.where(accept, (model.f_star(X) - np.where(accept, values, 0.0)) ** 2, 0.0)
    differs = accept != (s2 <= lam)
    return reg + np.where(differs, np.abs(s2 - lam), 0.0)


def excess_risk(model: SyntheticModel, predictor: RejectPredictor, epsilon: float,
                mc_n: int = 100_000, seed: int = 0, lam: float | None = None) -> tuple[float, float]:
    """Monte-Carlo closed-form excess risk and its standard error.

    The integrand is the squared gap to ``f_star`` on accepted points plus
    ``|sigma2 - lam|`` wherever the accept decision differs from the optimal
    one at ``lam`` (default: the ``(1 - epsilon)``-quantile of ``sigma2``).
    """
    epsilon = _check_open_epsilon(epsilon)
    if mc_n < 1:
        raise ValueError("mc_n must be >= 1")
    lam = _resolve_lambda(model, epsilon, lam, seed)
    X = model.sample_features(mc_n, make_rng(seed, STREAM_MC, 2))
    accept, values = predictor.predict_batch(X)
    return _mean_se(excess_risk_terms(model, X, accept, values, lam))


@dataclass(frozen=True)
class RiskCheck:
    direct: float
    closed_form: float
    direct_se: float
    closed_form_se: float
    agree: bool
    lam: float

    @property
    def combined_se(self) -> float:
        return math.hypot(self.direct_se, self.closed_form_se)


def risk_difference_check(model: SyntheticModel, predictor: RejectPredictor, epsilon: float,
                          mc_n: int = 100_000, seed: int = 0, lam: float | None = None,
                          n_se: float = 3.0) -> RiskCheck:
    """Compare the two excess-risk estimates on the same draws.

    ``direct`` is the difference of empirical penalized risks between the
    predictor and the optimal predictor, using sampled labels; ``closed_form``
    uses only ``f_star`` and ``sigma2``. They agree when within ``n_se``
    combined standard errors.
    """
    epsilon = _check_open_epsilon(epsilon)
    lam = _resolve_lambda(model, epsilon, lam, seed)
    rng = make_rng(seed, STREAM_MC, 3)
    X = model.sample_features(mc_n, rng)
    Y = model.sample_labels(X, rng)
    accept, values = predictor.predict_batch(X)
    opt = model.sigma2(X) <= lam
    loss = np.where(accept, (Y - np.where(accept, values, 0.0)) ** 2, 0.0) + lam * ~accept
    loss_opt = np.where(opt, (Y - model.f_star(X)) ** 2, 0.0) + lam * ~opt
    direct, direct_se = _mean_se(loss - loss_opt)
    closed, closed_se = _mean_se(excess_risk_terms(model, X, accept, values, lam))
    agree = abs(direct - closed) <= n_se * math.hypot(direct_se, closed_se)
    return RiskCheck(direct, closed, direct_se, closed_se, bool(agree), lam)


def rejection_rate(predictor: RejectPredictor, model: SyntheticModel, mc_n: int = 100_000,
                   seed: int = 0) -> float:
    """Monte-Carlo probability that ``predictor`` abstains under the feature law."""
    X = model.sample_features(mc_n, make_rng(seed, STREAM_MC, 4))
    accept, _ = predictor.predict_batch(X)
    return 1.0 - float(accept.mean())


@dataclass(frozen=True)
class OracleCurve:
    lambdas: np.ndarray
    err: np.ndarray
    err_se: np.ndarray
    reject_rate: np.ndarray
    accept: np.ndarray  # (len(lambdas), mc_n) boolean


def oracle_curve(model: SyntheticModel, lambdas, mc_n: int = 100_000, seed: int = 0) -> OracleCurve:
    """Err and rejection rate of the optimal threshold predictors over ``lambdas``.

    All thresholds share one labeled Monte-Carlo sample, so the accept sets
    are nested exactly. Err is NaN where nothing is accepted.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    rng = make_rng(seed, STREAM_MC, 5)
    X = model.sample_features(mc_n, rng)
    sq = (model.sample_labels(X, rng) - model.f_star(X)) ** 2
    s2 = model.sigma2(X)
    accept = s2[None, :] <= lambdas[:, None]
    err = np.full(lambdas.shape, np.nan)
    err_se = np.full(lambdas.shape, np.nan)
    for i, acc in enumerate(accept):
        if acc.any():
            err[i], err_se[i] = _mean_se(sq[acc])
    return OracleCurve(lambdas, err, err_se, 1.0 - accept.mean(axis=1), accept)
