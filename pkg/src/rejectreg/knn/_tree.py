"""Static kd-tree construction shared by both query backends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 16


@dataclass(frozen=True)
class FlatTree:
    """Array layout of a kd-tree.

    ``data`` holds the training points reordered so that every node covers the
    contiguous slice ``start[i]:end[i]``; ``perm`` maps reordered rows back to
    training indices. Internal nodes have ``left >= 0``. Every point of the
    left child has ``coord[dim] <= split`` and every point of the right child
    ``coord[dim] >= split``.
    """

    data: np.ndarray
    perm: np.ndarray
    start: np.ndarray
    end: np.ndarray
    dim: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.start.shape[0]


def build_tree(points: np.ndarray, leaf_size: int = LEAF_SIZE) -> FlatTree:
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    perm = np.arange(n, dtype=np.int64)
    start, end, dim, split, left, right = [], [], [], [], [], []

    def new_node(lo, hi):
        start.append(lo)
        end.append(hi)
        dim.append(0)
        split.append(0.0)
        left.append(-1)
        right.append(-1)
        return len(start) - 1

    stack = [new_node(0, n)]
    while stack:
        node = stack.pop()
        lo, hi = start[node], end[node]
        if hi - lo <= leaf_size:
            continue
        sub = points[perm[lo:hi]]
        spread = sub.max(axis=0) - sub.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0.0:
            # all points identical: keep as an oversized leaf
            continue
        mid = (hi - lo) // 2
        order = np.argpartition(sub[:, axis], mid, kind="introselect")
        perm[lo:hi] = perm[lo:hi][order]
        dim[node] = axis
        split[node] = points[perm[lo + mid], axis]
        left[node] = new_node(lo, lo + mid)
        right[node] = new_node(lo + mid, hi)
        stack.append(right[node])
        stack.append(left[node])

    return FlatTree(
        data=np.ascontiguousarray(points[perm]),
        perm=perm,
        start=np.array(start, dtype=np.int64),
        end=np.array(end, dtype=np.int64),
        dim=np.array(dim, dtype=np.int64),
        split=np.array(split, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
    )
