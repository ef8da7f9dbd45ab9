"""Threshold calibration on unlabeled data and the plug-in predictor.

The predictor abstains at ``x`` when the empirical distribution function of
the (perturbed) calibration variances, evaluated at the perturbed variance
estimate of ``x``, exceeds ``1 - epsilon``. Perturbations are uniform on
``[0, u]``; they make the distribution of the variance scores continuous so
that the rejection rate concentrates around ``epsilon``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from .core import (
    STREAM_ZETA_CAL,
    STREAM_ZETA_QUERY,
    Abstain,
    EmptyInputError,
    EpsilonOutOfRangeError,
    FeatureSet,
    NegativeUError,
    Predict,
    check_query,
    make_rng,
)

DEFAULT_U = 1e-10


class EmpiricalCdf:
    """Right-continuous empirical distribution function of a finite sample."""

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
        if v.size == 0:
            raise EmptyInputError("empirical cdf needs at least one value")
        if not np.isfinite(v).all():
            raise ValueError("calibration values must be finite")
        v.setflags(write=False)
        self.values = v

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def count_le(self, t) -> np.ndarray:
        return np.searchsorted(self.values, t, side="right")

    def evaluate(self, t):
        """Fraction of values ``<= t``; vectorized over ``t``."""
        out = self.count_le(t) / self.size
        return float(out) if np.ndim(out) == 0 else out

    def __call__(self, t):
        return self.evaluate(t)

    def max_accepted_count(self, epsilon: float) -> int:
        """Largest count ``c`` with ``c / N <= 1 - epsilon``.

        Uses the exact float comparison of :meth:`accepts`, so the count and
        the cdf rule can never disagree through rounding.
        """
        N = self.size
        level = 1.0 - epsilon
        m = min(N, max(0, int(math.floor(level * N))))
        while m < N and (m + 1) / N <= level:
            m += 1
        while m > 0 and m / N > level:
            m -= 1
        return m

    def accepts(self, scores, epsilon: float) -> np.ndarray:
        return self.count_le(scores) / self.size <= 1.0 - epsilon


def build_cdf(variance_values, u: float, seed: int | np.random.Generator) -> EmpiricalCdf:
    """Empirical cdf of ``variance_values`` each shifted by an independent U[0, u] draw.

    ``u = 0`` gives the unsmoothed empirical cdf.
    """
    values = np.asarray(variance_values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise EmptyInputError("no calibration values")
    if not u >= 0:
        raise NegativeUError(f"perturbation bound must be >= 0, got {u}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, STREAM_ZETA_CAL)
    return EmpiricalCdf(values + rng.uniform(0.0, u, size=values.size))


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 <= epsilon < 1.0:
        raise EpsilonOutOfRangeError(f"epsilon must lie in [0, 1), got {epsilon}")
    return epsilon


@dataclass
class PluginPredictor:
    """Calibrated predictor with reject option.

    ``regression`` and ``variance`` map an (m, d) array to (m,) arrays; any
    pair of estimators works, kNN being the shipped one. Per-query
    perturbations come from ``rng`` unless ``deterministic_zeta`` is set, in
    which case they are zero.
    """

    regression: Callable[[np.ndarray], np.ndarray]
    variance: Callable[[np.ndarray], np.ndarray]
    cdf: EmpiricalCdf
    epsilon: float
    u: float
    dimension: int
    rng: np.random.Generator
    deterministic_zeta: bool = False
    seed: Optional[int] = None
    both: Optional[Callable[[np.ndarray], tuple]] = field(default=None, repr=False)
    model: Any = field(default=None, repr=False)

    def with_epsilon(self, epsilon: float) -> "PluginPredictor":
        """Same calibration and estimators at another rejection rate."""
        return replace(self, epsilon=_check_epsilon(epsilon))

    def draw_zeta(self, m: int) -> np.ndarray:
        if self.deterministic_zeta or self.u == 0:
            return np.zeros(m)
        return self.rng.uniform(0.0, self.u, size=m)

    def scores(self, X, zeta=None) -> np.ndarray:
        X = check_query(X, self.dimension)
        zeta = self.draw_zeta(X.shape[0]) if zeta is None else np.asarray(zeta, dtype=np.float64)
        return self.variance(X) + zeta

    def accepts_scores(self, scores) -> np.ndarray:
        return self.cdf.accepts(scores, self.epsilon)

    def predict_batch(self, X, zeta=None) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(accept, values)``; ``values`` is NaN where abstaining."""
        X = check_query(X, self.dimension)
        if zeta is None:
            zeta = self.draw_zeta(X.shape[0])
        if self.both is not None:
            f, s2 = self.both(X)
        else:
            f, s2 = self.regression(X), self.variance(X)
        accept = self.accepts_scores(s2 + zeta)
        return accept, np.where(accept, f, np.nan)

    def predict(self, x, zeta: float | None = None):
        """Single-point :class:`Predict` or ``Abstain``."""
        X = check_query(x, self.dimension)
        if X.shape[0] != 1:
            raise ValueError("predict takes a single point; use predict_batch")
        accept, values = self.predict_batch(X, None if zeta is None else np.array([zeta]))
        return Predict(float(values[0])) if accept[0] else Abstain

    def threshold_equivalent(self) -> float:
        """Largest calibration value that is still accepted, ``-inf`` if none is.

        A score equal to (or below) this value is accepted; a score at or above
        the next calibration value is rejected. Scores strictly between the
        two are accepted too, see :meth:`rejection_bound`.
        """
        m = self.cdf.max_accepted_count(self.epsilon)
        return float(self.cdf.values[m - 1]) if m > 0 else -math.inf

    def rejection_bound(self) -> float:
        """Smallest calibration value that is rejected; ``inf`` if none is.

        The cdf rule is exactly ``accept iff score < rejection_bound()``.
        """
        m = self.cdf.max_accepted_count(self.epsilon)
        return float(self.cdf.values[m]) if m < self.cdf.size else math.inf


def calibrate(f_hat, sigma2_hat, unlabeled: FeatureSet, epsilon: float, u: float = DEFAULT_U,
              seed: int = 0, deterministic_zeta: bool = False, both=None) -> PluginPredictor:
    """Assemble a plug-in predictor from estimators and an unlabeled sample.

    ``f_hat``/``sigma2_hat`` are callables on (m, d) arrays. ``both``, if
    given, returns the two estimates from one pass (used for kNN models).
    """
    epsilon = _check_epsilon(epsilon)
    if not u >= 0:
        raise NegativeUError(f"perturbation bound must be >= 0, got {u}")
    if not isinstance(unlabeled, FeatureSet):
        unlabeled = FeatureSet(unlabeled)
    cdf = build_cdf(sigma2_hat(unlabeled.X), u, make_rng(seed, STREAM_ZETA_CAL))
    return PluginPredictor(
        regression=f_hat,
        variance=sigma2_hat,
        cdf=cdf,
        epsilon=epsilon,
        u=float(u),
        dimension=unlabeled.dimension,
        rng=make_rng(seed, STREAM_ZETA_QUERY),
        deterministic_zeta=deterministic_zeta,
        seed=seed,
        both=both,
    )


def calibrate_knn(model, unlabeled: FeatureSet, epsilon: float, u: float = DEFAULT_U,
                  seed: int = 0, deterministic_zeta: bool = False) -> PluginPredictor:
    """:func:`calibrate` with the two estimators of a fitted ``KnnModel``."""
    pred = calibrate(model.predict, model.variance, unlabeled, epsilon, u, seed,
                     deterministic_zeta, both=model.predict_with_variance)
    return replace(pred, model=model)


def predict(pred: PluginPredictor, x):
    return pred.predict(x)


def threshold_equivalent(pred: PluginPredictor) -> float:
    return pred.threshold_equivalent()
