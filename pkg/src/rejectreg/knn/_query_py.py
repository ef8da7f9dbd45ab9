"""Pure-Python fallback for the compiled kd-tree query."""

from __future__ import annotations

import numpy as np

from ._tree import FlatTree


def sq_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    # accumulate per coordinate in index order (matches the compiled kernel)
    s = np.zeros(points.shape[0])
    for j in range(points.shape[1]):
        t = q[j] - points[:, j]
        s = s + t * t
    return s


def _query_one(tree: FlatTree, q: np.ndarray, k: int):
    best_d = np.empty(0)
    best_i = np.empty(0, dtype=np.int64)
    stack = [(0, 0.0)]
    left, right, dim, split = tree.left, tree.right, tree.dim, tree.split
    while stack:
        node, bound = stack.pop()
        if best_d.shape[0] == k and bound > best_d[-1]:
            continue
        if left[node] < 0:
            lo, hi = tree.start[node], tree.end[node]
            d = np.concatenate([best_d, sq_distances(tree.data[lo:hi], q)])
            i = np.concatenate([best_i, tree.perm[lo:hi]])
            order = np.lexsort((i, d))[:k]
            best_d, best_i = d[order], i[order]
            continue
        diff = q[dim[node]] - split[node]
        if diff < 0:
            near, far = left[node], right[node]
        else:
            near, far = right[node], left[node]
        stack.append((far, max(diff * diff, bound)))
        stack.append((near, bound))
    return best_i, best_d


def query_knn(tree: FlatTree, queries: np.ndarray, k: int):
    """Return ``(indices, sqdist)`` arrays of shape (m, min(k, n))."""
    kk = min(k, tree.data.shape[0])
    m = queries.shape[0]
    out_i = np.empty((m, kk), dtype=np.int64)
    out_d = np.empty((m, kk), dtype=np.float64)
    for r in range(m):
        out_i[r], out_d[r] = _query_one(tree, queries[r], kk)
    return out_i, out_d
