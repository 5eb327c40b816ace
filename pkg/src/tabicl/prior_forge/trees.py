"""In-house gradient-boosted tree regressor for the tree-structured prior.

Squared loss.  Instead of summing independent trees, each boosting stage
refines the current partition: it picks the leaf cell with the largest
residual sum of squares and grows a depth-limited CART subtree inside that
cell on the residuals.  The model therefore stays a single incrementally
deepened tree whose leaf count after T stages is at most
1 + T*(2^max_depth - 1), so every prediction column has at most
n_estimators * 2^max_depth + 1 distinct values.

The split scan is the hot loop; a Cython kernel is used when the compiled
extension built, with a pure-numpy fallback selected at import time.
"""

from __future__ import annotations

import numpy as np

try:
    from ._splitscan import scan_splits
    COMPILED_KERNEL = True
except ImportError:  # pragma: no cover - depends on build environment
    from .splitscan_np import scan_splits
    COMPILED_KERNEL = False

_MIN_GAIN = 1e-12


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value=0.0):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = value

    @property
    def is_leaf(self):
        return self.left is None


def find_best_split(X, y, idx, min_leaf, scan=None):
    """Best (feature, threshold, gain) over the rows `idx`; gain < 0 if none."""
    scan = scan or scan_splits
    best = (-1, 0.0, -1.0)
    for f in range(X.shape[1]):
        col = X[idx, f]
        order = np.argsort(col, kind="stable")
        gain, thr = scan(np.ascontiguousarray(col[order]),
                         np.ascontiguousarray(y[idx][order]), min_leaf)
        if gain > best[2]:
            best = (f, thr, gain)
    return best


class BoostedTreeRegressor:
    def __init__(self, n_estimators, max_depth, min_leaf=2):
        if n_estimators < 1 or max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.root = None

    def _grow(self, X, y, idx, depth, leaves):
        node = _Node(float(y[idx].mean()))
        if depth >= self.max_depth or idx.size < 2 * self.min_leaf:
            leaves.append((node, idx))
            return node
        f, thr, gain = find_best_split(X, y, idx, self.min_leaf)
        if gain <= _MIN_GAIN:
            leaves.append((node, idx))
            return node
        mask = X[idx, f] <= thr
        node.feature = f
        node.threshold = thr
        node.left = self._grow(X, y, idx[mask], depth + 1, leaves)
        node.right = self._grow(X, y, idx[~mask], depth + 1, leaves)
        return node

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        n = X.shape[0]
        self.root = _Node(float(y.mean()))
        cells = [(self.root, np.arange(n))]
        for _ in range(self.n_estimators):
            # refine the cell with the largest residual SSE
            best_i, best_sse = -1, -1.0
            for i, (node, idx) in enumerate(cells):
                if idx.size < 2 * self.min_leaf:
                    continue
                r = y[idx] - node.value
                sse = float(r @ r)
                if sse > best_sse:
                    best_i, best_sse = i, sse
            if best_i < 0 or best_sse <= _MIN_GAIN:
                break
            node, idx = cells.pop(best_i)
            new_leaves = []
            sub = self._grow(X, y, idx, 0, new_leaves)
            if sub.is_leaf:
                # no usable split in this cell; retire it
                cells.append((node, np.empty(0, dtype=np.int64)))
                continue
            node.feature = sub.feature
            node.threshold = sub.threshold
            node.left = sub.left
            node.right = sub.right
            cells.extend(new_leaves)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.float64)

        def walk(node, idx):
            if node.is_leaf:
                out[idx] = node.value
                return
            mask = X[idx, node.feature] <= node.threshold
            walk(node.left, idx[mask])
            walk(node.right, idx[~mask])

        walk(self.root, np.arange(X.shape[0]))
        return out

    def n_leaves(self):
        def count(node):
            if node.is_leaf:
                return 1
            return count(node.left) + count(node.right)

        return count(self.root) if self.root is not None else 0


def sample_tree_hyperparams(rng):
    """(n_estimators, max_depth) = min{4, 1+Exp(0.5)} and min{4, 2+Exp(0.5)}.

    Floored to integers, clamped to >= 1 and >= 2 respectively.
    """
    n_est = min(4, int(np.floor(1.0 + rng.exponential(scale=2.0))))
    depth = min(4, int(np.floor(2.0 + rng.exponential(scale=2.0))))
    return max(1, n_est), max(2, depth)
