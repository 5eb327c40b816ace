"""Structural-causal-model dataset generators and the prior sampler.

Two families share the same skeleton: a layered DAG shaped like a fully
connected MLP, propagated from Gaussian input noise.  The `scm` family uses
linear maps plus the activation zoo plus per-node noise; the `tree_scm`
family replaces both with boosted-tree regressors fitted on throwaway
standard-normal targets, which makes every dependency piecewise constant.
Features are a random subset of the non-input nodes, the target node comes
from the last two layers, and labels are random quantile bins of the target.
"""

from __future__ import annotations

import numpy as np

from .activations import activation_layer, sample_activation_kind
from .datasets import (DataError, DegenerateTargetError, PriorConfig,
                       PriorSamplingError, SyntheticDataset, discretize_target)
from .trees import BoostedTreeRegressor, sample_tree_hyperparams

# node values are clamped so that any feature column fits float32 with room
# to square it downstream
_VALUE_CLIP = 1e6
_GRAPH_RETRIES = 30


class ScmGraph:
    """Sampled layered DAG: widths, edge weights, activations, node noise."""

    def __init__(self, noise_dim, widths, weights, activations, sigmas):
        self.noise_dim = noise_dim
        self.widths = widths
        self.weights = weights
        self.activations = activations
        self.sigmas = sigmas

    @classmethod
    def sample(cls, rng, config: PriorConfig, min_nodes,
               force_activation=None, force_sigma=None):
        n_layers = int(rng.integers(config.layers[0], config.layers[1] + 1))
        for _ in range(50):
            widths = rng.integers(config.width[0], config.width[1] + 1,
                                  size=n_layers).tolist()
            if sum(widths) >= min_nodes:
                break
        else:
            need = int(np.ceil(min_nodes / n_layers))
            widths = [max(need, config.width[0])] * n_layers
        noise_dim = int(rng.integers(config.noise_dim[0], config.noise_dim[1] + 1))

        if force_activation is not None:
            activations = [force_activation] * n_layers
        elif rng.random() < 0.5:
            activations = [sample_activation_kind(rng)] * n_layers
        else:
            activations = [sample_activation_kind(rng) for _ in range(n_layers)]

        weights, sigmas = [], []
        fan_in = noise_dim
        lo, hi = config.sigma_log_range
        for w in widths:
            weights.append(rng.standard_normal((fan_in, w)))
            if force_sigma is not None:
                sigmas.append(np.full(w, float(force_sigma)))
            else:
                sigmas.append(np.exp(rng.uniform(lo, hi, size=w)))
            fan_in = w
        return cls(noise_dim, widths, weights, activations, sigmas)

    def propagate(self, n, rng):
        """Returns the list of per-layer node values, each (n, width)."""
        h = rng.standard_normal((n, self.noise_dim))
        outs = []
        for w_mat, kind, sigma in zip(self.weights, self.activations, self.sigmas):
            z = activation_layer(h @ w_mat, kind, rng)
            z = z + rng.standard_normal(z.shape) * sigma
            h = np.clip(z, -_VALUE_CLIP, _VALUE_CLIP)
            outs.append(h)
        return outs


def _draw_task_dims(config, rng, n, m, C):
    if n is None:
        n = int(rng.integers(config.n_samples[0], config.n_samples[1] + 1))
    if m is None:
        m = int(rng.integers(config.n_features[0], config.n_features[1] + 1))
    if C is None:
        C = int(rng.integers(config.n_classes[0], config.n_classes[1] + 1))
    if n < 2 * C:
        n = 2 * C
    return n, m, C


def _pick_and_discretize(layer_values, m, C, rng, max_targets=5):
    """Choose target + feature nodes and bin the target; returns (X, y).

    The target comes from the last two layers.  Tree layers can produce
    columns with very few distinct values, so candidates with fewer than C
    distinct values are skipped and up to `max_targets` candidates are tried
    before giving up on this graph.
    """
    widths = [v.shape[1] for v in layer_values]
    offsets = np.cumsum([0] + widths)
    vals = np.concatenate(layer_values, axis=1)
    pool_start = offsets[-3] if len(widths) >= 2 else 0
    pool = rng.permutation(np.arange(pool_start, offsets[-1]))
    tried = 0
    for target in pool:
        t_col = vals[:, target]
        if np.unique(t_col).size < C:
            continue
        try:
            y = discretize_target(t_col, C, rng)
        except DegenerateTargetError:
            tried += 1
            if tried >= max_targets:
                break
            continue
        candidates = np.delete(np.arange(offsets[-1]), target)
        feats = rng.choice(candidates, size=m, replace=False)
        return vals[:, feats].astype(np.float32), y
    raise DegenerateTargetError("no usable target node in the sampled graph")


def gen_scm_dataset(config, rng, n=None, m=None, C=None,
                    force_activation=None, force_sigma=None, seed=None):
    config.validate()
    for _ in range(_GRAPH_RETRIES):
        # Task dims are part of the rejection loop: a discretization failure
        # rejects the whole (dims, graph) draw, not just the graph.
        n_i, m_i, C_i = _draw_task_dims(config, rng, n, m, C)
        graph = ScmGraph.sample(rng, config, m_i + 1,
                                force_activation=force_activation,
                                force_sigma=force_sigma)
        layer_values = graph.propagate(n_i, rng)
        try:
            X, y = _pick_and_discretize(layer_values, m_i, C_i, rng)
        except DegenerateTargetError:
            continue
        return SyntheticDataset(X=X, y=y, C=C_i, kind="scm", seed=seed)
    raise PriorSamplingError("scm generation exhausted its retries")


def gen_tree_scm_dataset(config, rng, n=None, m=None, C=None, seed=None):
    config.validate()
    for _ in range(_GRAPH_RETRIES):
        # Dims are redrawn on every retry.  Tree layers at large n often give
        # columns with so few distinct values that a many-class quantile cut
        # can never place >= 2 samples in each class; retrying with a fresh C
        # makes the rejection loop terminate instead of looping on a doomed
        # (large C, blocky target) combination.
        n_i, m_i, C_i = _draw_task_dims(config, rng, n, m, C)
        n_layers = int(rng.integers(config.layers[0], config.layers[1] + 1))
        for _ in range(50):
            widths = rng.integers(config.width[0], config.width[1] + 1,
                                  size=n_layers).tolist()
            if sum(widths) >= m_i + 1:
                break
        else:
            widths = [max(int(np.ceil((m_i + 1) / n_layers)), config.width[0])] * n_layers
        noise_dim = int(rng.integers(config.noise_dim[0], config.noise_dim[1] + 1))

        h = rng.standard_normal((n_i, noise_dim))
        layer_values, stats = [], []
        for w in widths:
            out = np.empty((n_i, w))
            n_est, depth = sample_tree_hyperparams(rng)
            for c in range(w):
                fake = rng.standard_normal(n_i)
                model = BoostedTreeRegressor(n_est, depth).fit(h, fake)
                out[:, c] = model.predict(h)
            h = out
            layer_values.append(out)
            stats.append((n_est, depth,
                          [int(np.unique(out[:, c]).size) for c in range(w)]))
        try:
            X, y = _pick_and_discretize(layer_values, m_i, C_i, rng)
        except DegenerateTargetError:
            continue
        return SyntheticDataset(X=X, y=y, C=C_i, kind="tree_scm", seed=seed,
                                tree_layer_stats=stats)
    raise PriorSamplingError("tree-scm generation exhausted its retries")


def dataset_rng(seed, index):
    """Per-dataset stream: independent of ordering and worker count."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


def sample_dataset(config, seed, index, n=None, kind=None):
    """Generate dataset `index` of the stream rooted at `seed`."""
    rng = dataset_rng(seed, index)
    if kind is None:
        kind = "scm" if rng.random() < config.scm_fraction else "tree_scm"
    if kind == "scm":
        return gen_scm_dataset(config, rng, n=n, seed=int(index))
    if kind == "tree_scm":
        return gen_tree_scm_dataset(config, rng, n=n, seed=int(index))
    raise DataError(f"unknown dataset kind {kind!r}")


def sample_prior_batch(batch_size, config, seed, start_index=0, n=None):
    """A list of `batch_size` datasets; element i uses stream (seed, start+i)."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    return [sample_dataset(config, seed, start_index + i, n=n)
            for i in range(batch_size)]
