"""Exact nearest-neighbor index with a compiled or pure-Python query backend."""

from __future__ import annotations

import os

import numpy as np

from ..core import EmptyInputError, KOutOfRangeError, check_query, _as_matrix, NonFiniteError
from . import _query_py
from ._tree import LEAF_SIZE, FlatTree, build_tree

try:
    if os.environ.get("REJECTREG_PURE_PYTHON"):
        raise ImportError("pure-Python backend forced")
    from . import _query_ext
except ImportError:  # pragma: no cover - depends on build
    _query_ext = None

BACKENDS = {"python": _query_py.query_knn}
if _query_ext is not None:
    BACKENDS["compiled"] = _query_ext.query_knn

DEFAULT_BACKEND = "compiled" if "compiled" in BACKENDS else "python"


class NeighborIndex:
    """Static kd-tree over training points.

    Queries return neighbors ordered by nondecreasing Euclidean distance, with
    ties broken by ascending training index, identical to a brute-force scan.

    Parameters
    ----------
    points : array-like, shape (n, d)
    leaf_size : int
    backend : {"compiled", "python"}, optional
        Defaults to the compiled kernel when it is importable.
    """

    def __init__(self, points, leaf_size: int = LEAF_SIZE, backend: str | None = None):
        X = _as_matrix(points)
        if X.shape[0] == 0:
            raise EmptyInputError("cannot index an empty point set")
        if not np.isfinite(X).all():
            raise NonFiniteError(int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0]))
        self.backend = backend or DEFAULT_BACKEND
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown or unavailable backend {self.backend!r}")
        self._query = BACKENDS[self.backend]
        self.tree: FlatTree = build_tree(X, leaf_size)
        self.points = X

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def query(self, X, k: int, return_distance: bool = False):
        """Indices of the ``min(k, n)`` nearest training points for each query row."""
        if k < 1:
            raise KOutOfRangeError(f"k must be positive, got {k}")
        Q = check_query(X, self.dimension)
        idx, dist2 = self._query(self.tree, Q, int(k))
        if return_distance:
            return idx, np.sqrt(dist2)
        return idx


def build_index(points, **kwargs) -> NeighborIndex:
    return NeighborIndex(points, **kwargs)
