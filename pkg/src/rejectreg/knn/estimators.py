"""kNN estimators of the regression function and of the conditional variance."""

from __future__ import annotations

import numpy as np

from ..core import KOutOfRangeError, LabeledDataset
from .index import NeighborIndex


def _row_mean(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values)
    return values.sum(axis=1) / values.shape[1]


class KnnModel:
    """Fitted kNN regression and residual-based variance estimator.

    The regression estimate at ``x`` is the mean label of its ``k`` nearest
    training points. The variance estimate is the mean, over the ``k_sigma``
    nearest training points ``X_j``, of ``(Y_j - fhat(X_j))**2`` where
    ``fhat(X_j)`` is the in-sample fit (``X_j`` counts among its own
    neighbors). With ``k_sigma = k`` this is the textbook estimator; in
    particular ``k = 1`` gives an identically zero variance.

    Parameters
    ----------
    data : LabeledDataset
    k : int
        Neighbors for the regression estimate, ``1 <= k <= n``.
    k_sigma : int, optional
        Neighbors for the variance estimate; defaults to ``k``.
    index : NeighborIndex, optional
        Prebuilt index over ``data.X`` (saves a rebuild when refitting).
    backend : str, optional
        Query backend forwarded to :class:`NeighborIndex`.
    """

    def __init__(self, data: LabeledDataset, k: int, k_sigma: int | None = None,
                 index: NeighborIndex | None = None, backend: str | None = None):
        n = data.n
        k_sigma = k if k_sigma is None else k_sigma
        for name, v in (("k", k), ("k_sigma", k_sigma)):
            if not (isinstance(v, (int, np.integer)) and 1 <= v <= n):
                raise KOutOfRangeError(f"{name}={v} outside [1, {n}]")
        self.data = data
        self.k = int(k)
        self.k_sigma = int(k_sigma)
        self.index = index if index is not None else NeighborIndex(data.X, backend=backend)
        self.labels = data.y
        nbr = self.index.query(data.X, self.k)
        self.fitted_ = _row_mean(self.labels[nbr])
        self.sq_residuals_ = (self.labels - self.fitted_) ** 2

    @property
    def dimension(self) -> int:
        return self.data.dimension

    def predict(self, X) -> np.ndarray:
        """Regression estimate at each query row."""
        return _row_mean(self.labels[self.index.query(X, self.k)])

    def variance(self, X) -> np.ndarray:
        """Conditional-variance estimate at each query row (always >= 0)."""
        return _row_mean(self.sq_residuals_[self.index.query(X, self.k_sigma)])

    def predict_with_variance(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Both estimates from a single neighbor query."""
        kmax = max(self.k, self.k_sigma)
        nbr = self.index.query(X, kmax)
        return (_row_mean(self.labels[nbr[:, : self.k]]),
                _row_mean(self.sq_residuals_[nbr[:, : self.k_sigma]]))


def knn_fit(data: LabeledDataset, k: int, k_sigma: int | None = None, **kwargs) -> KnnModel:
    return KnnModel(data, k, k_sigma, **kwargs)


def knn_predict(model: KnnModel, x) -> np.ndarray:
    return model.predict(x)


def knn_variance(model: KnnModel, x) -> np.ndarray:
    return model.variance(x)
