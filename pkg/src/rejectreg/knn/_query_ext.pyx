# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled k-nearest-neighbor query over a flat kd-tree.

Squared distances are accumulated coordinate by coordinate in index order,
which is the same order the pure-Python backend and the brute-force scan use,
so all three agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline bint _before(double da, long ia, double db, long ib) noexcept nogil:
    return da < db or (da == db and ia < ib)


cdef void _query_one(const double[:, ::1] data, const long[::1] perm,
                     const long[::1] start, const long[::1] end,
                     const long[::1] dim, const double[::1] split,
                     const long[::1] left, const long[::1] right,
                     const double* q, long d, long k,
                     double* best_d, long* best_i,
                     long* stack_node, double* stack_bound) noexcept nogil:
    cdef long count = 0, top = 0, node, p, j, pos, idx, near, far
    cdef double bound, s, t, diff, fb
    stack_node[0] = 0
    stack_bound[0] = 0.0
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        bound = stack_bound[top]
        if count == k and bound > best_d[k - 1]:
            continue
        if left[node] < 0:
            for p in range(start[node], end[node]):
                s = 0.0
                for j in range(d):
                    t = q[j] - data[p, j]
                    s = s + t * t
                idx = perm[p]
                if count < k:
                    pos = count
                    count += 1
                elif _before(s, idx, best_d[k - 1], best_i[k - 1]):
                    pos = k - 1
                else:
                    continue
                while pos > 0 and _before(s, idx, best_d[pos - 1], best_i[pos - 1]):
                    best_d[pos] = best_d[pos - 1]
                    best_i[pos] = best_i[pos - 1]
                    pos -= 1
                best_d[pos] = s
                best_i[pos] = idx
            continue
        diff = q[dim[node]] - split[node]
        if diff < 0:
            near = left[node]
            far = right[node]
        else:
            near = right[node]
            far = left[node]
        fb = diff * diff
        if fb < bound:
            fb = bound
        stack_node[top] = far
        stack_bound[top] = fb
        top += 1
        stack_node[top] = near
        stack_bound[top] = bound
        top += 1


def query_knn(tree, const double[:, ::1] queries, long k):
    """Return ``(indices, sqdist)`` arrays of shape (m, min(k, n))."""
    cdef const double[:, ::1] data = tree.data
    cdef const long[::1] perm = tree.perm
    cdef const long[::1] start = tree.start
    cdef const long[::1] end = tree.end
    cdef const long[::1] dim = tree.dim
    cdef const double[::1] split = tree.split
    cdef const long[::1] left = tree.left
    cdef const long[::1] right = tree.right
    cdef long n = data.shape[0], d = data.shape[1], m = queries.shape[0]
    cdef long kk = k if k < n else n
    cdef long n_nodes = start.shape[0]
    out_i = np.empty((m, kk), dtype=np.int64)
    out_d = np.empty((m, kk), dtype=np.float64)
    cdef long[:, ::1] oi = out_i
    cdef double[:, ::1] od = out_d
    cdef long r
    cdef long* stack_node = <long*> malloc((n_nodes + 2) * sizeof(long))
    cdef double* stack_bound = <double*> malloc((n_nodes + 2) * sizeof(double))
    if stack_node == NULL or stack_bound == NULL:
        free(stack_node)
        free(stack_bound)
        raise MemoryError()
    try:
        with nogil:
            for r in range(m):
                _query_one(data, perm, start, end, dim, split, left, right,
                           &queries[r, 0], d, kk, &od[r, 0], &oi[r, 0],
                           stack_node, stack_bound)
    finally:
        free(stack_node)
        free(stack_bound)
    return out_i, out_d
