from .index import BACKENDS, DEFAULT_BACKEND, NeighborIndex, build_index
from .estimators import KnnModel, knn_fit, knn_predict, knn_variance

__all__ = [
    "BACKENDS",
    "DEFAULT_BACKEND",
    "NeighborIndex",
    "build_index",
    "KnnModel",
    "knn_fit",
    "knn_predict",
    "knn_variance",
]
