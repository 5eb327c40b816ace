"""Pure-numpy split scan, the fallback when the compiled kernel is absent.

Mirrors `_splitscan.pyx` operation for operation (same summation order, same
tie-breaking) so both implementations pick identical splits.
"""

import numpy as np


def scan_splits(xs, ys, min_leaf):
    """Best SSE-reduction split of a sorted feature.

    xs: ascending feature values, ys: targets in the same order.  Returns
    (gain, threshold); gain < 0 means no valid split exists.
    """
    k = xs.shape[0]
    if k < 2 * min_leaf:
        return -1.0, 0.0
    cy = np.cumsum(ys)
    cy2 = np.cumsum(ys * ys)
    tot_y = cy[-1]
    tot_y2 = cy2[-1]
    sse_tot = tot_y2 - tot_y * tot_y / k
    i = np.arange(1, k)
    valid = (i >= min_leaf) & (k - i >= min_leaf) & (xs[1:] > xs[:-1])
    if not valid.any():
        return -1.0, 0.0
    ly = cy[:-1]
    ly2 = cy2[:-1]
    ry = tot_y - ly
    ry2 = tot_y2 - ly2
    gain = sse_tot - (ly2 - ly * ly / i) - (ry2 - ry * ry / (k - i))
    gain[~valid] = -np.inf
    b = int(np.argmax(gain))
    thr = 0.5 * (xs[b] + xs[b + 1])
    return float(gain[b]), float(thr)
