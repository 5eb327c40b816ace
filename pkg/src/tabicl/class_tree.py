"""Hierarchical classification for more classes than the model head covers.

Classes are recursively dealt into at most c_max near-equal groups; each
node runs one in-context sub-task over its group indices (or leaf classes),
always reusing the same row embeddings H.  Per-class probabilities are the
product of the node-level probabilities along the root-to-leaf path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .prior_forge import DataError


def tree_depth(k, c_max=10):
    """Number of classifier levels needed for k classes: ceil(log_{c_max} k)."""
    if k < 1:
        raise DataError("k must be >= 1")
    r, cap = 0, 1
    while cap < k:
        cap *= c_max
        r += 1
    return max(r, 1)


@dataclass
class TreeNode:
    classes: np.ndarray  # member class indices, ascending
    children: list | None = None  # None marks a leaf

    @property
    def is_leaf(self):
        return self.children is None


@dataclass
class ClassTree:
    root: TreeNode
    k: int
    c_max: int
    depth: int


def build_tree(k, c_max=10):
    """Even recursive partition; resulting depth is ceil(log_{c_max} k).

    A node with j > c_max members is split into ceil(j / c_max^(r-1)) groups
    where r is the node's depth, dealing the sorted members round-robin, so
    group sizes differ by at most one and every child fits a subtree of
    depth r-1.
    """
    if k < 2:
        raise DataError("build_tree needs k >= 2")

    def build(members):
        j = members.size
        if j <= c_max:
            return TreeNode(members)
        cap = c_max ** (tree_depth(j, c_max) - 1)
        g = -(-j // cap)
        groups = [members[i::g] for i in range(g)]
        return TreeNode(members, [build(grp) for grp in groups])

    root = build(np.arange(k))

    def measure(node):
        if node.is_leaf:
            return 1
        return 1 + max(measure(c) for c in node.children)

    return ClassTree(root=root, k=k, c_max=c_max, depth=measure(root))


def predict_hierarchical(tree: ClassTree, H, y_train, model):
    """Chain-rule class probabilities (n_test, k) from shared embeddings H.

    H covers all rows (train first); y_train fixes the context length.  Each
    node classifies using only the train rows whose class belongs to it,
    relabeled by child-group index (leaves: by position within the leaf).
    Only fuse_labels + icl_forward rerun per node; H is computed once by the
    caller.
    """
    y_train = np.asarray(y_train)
    n_train = y_train.shape[0]
    n_test = H.shape[0] - n_train
    if n_test < 1:
        raise DataError("no test rows")
    h_test = H[n_train:]
    out = np.zeros((n_test, tree.k), dtype=np.float64)

    def node_probs(members, relabel, n_sub):
        idx = np.flatnonzero(np.isin(y_train, members))
        if idx.size == 0:
            raise DataError("a class group has no train rows")
        h_node = tc.concat([H[idx], h_test], axis=0)
        return model.classify_from_h(h_node, relabel[y_train[idx]], idx.size,
                                     n_sub).data

    def recurse(node, path_prob):
        members = node.classes
        if node.is_leaf:
            if members.size == 1:
                out[:, members[0]] = path_prob
                return
            relabel = np.full(tree.k, -1, dtype=np.int64)
            relabel[members] = np.arange(members.size)
            p = node_probs(members, relabel, members.size)
            out[:, members] = path_prob[:, None] * p
            return
        relabel = np.full(tree.k, -1, dtype=np.int64)
        for gi, child in enumerate(node.children):
            relabel[child.classes] = gi
        p = node_probs(members, relabel, len(node.children))
        for gi, child in enumerate(node.children):
            recurse(child, path_prob * p[:, gi])

    recurse(tree.root, np.ones(n_test, dtype=np.float64))
    return out.astype(H.dtype if hasattr(H, "dtype") else np.float64)
