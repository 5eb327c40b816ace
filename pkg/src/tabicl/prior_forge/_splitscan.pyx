# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled split scan for the boosted-tree prior generator.

Keep in lockstep with splitscan_np.py: same summation order and the same
first-max tie-breaking, so the two implementations choose identical splits.
"""

import numpy as np


def scan_splits(double[::1] xs, double[::1] ys, Py_ssize_t min_leaf):
    """Best SSE-reduction split of a sorted feature; returns (gain, threshold)."""
    cdef Py_ssize_t k = xs.shape[0]
    cdef Py_ssize_t i
    cdef double tot_y = 0.0, tot_y2 = 0.0
    cdef double ly = 0.0, ly2 = 0.0
    cdef double ry, ry2, gain, sse_tot
    cdef double best_gain = -1.0
    cdef double best_thr = 0.0
    cdef bint found = 0

    if k < 2 * min_leaf:
        return -1.0, 0.0
    for i in range(k):
        tot_y += ys[i]
        tot_y2 += ys[i] * ys[i]
    sse_tot = tot_y2 - tot_y * tot_y / k

    for i in range(1, k):
        ly += ys[i - 1]
        ly2 += ys[i - 1] * ys[i - 1]
        if i < min_leaf or k - i < min_leaf:
            continue
        if not xs[i] > xs[i - 1]:
            continue
        ry = tot_y - ly
        ry2 = tot_y2 - ly2
        gain = sse_tot - (ly2 - ly * ly / i) - (ry2 - ry * ry / (k - i))
        if not found or gain > best_gain:
            best_gain = gain
            best_thr = 0.5 * (xs[i - 1] + xs[i])
            found = 1
    if not found:
        return -1.0, 0.0
    return best_gain, best_thr
