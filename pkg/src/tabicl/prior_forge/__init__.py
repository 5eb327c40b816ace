"""Synthetic prior generation: SCM and tree-SCM dataset families."""

from .activations import (ACTIVATION_KINDS, RandomFourierActivation,
                          activation_layer, sample_activation_kind, standardize)
from .datasets import (DataError, DegenerateTargetError, PriorConfig,
                       PriorSamplingError, SyntheticDataset, discretize_target,
                       export_scatter_csv, load_ticl, save_ticl,
                       validate_dataset)
from .scm import (ScmGraph, dataset_rng, gen_scm_dataset, gen_tree_scm_dataset,
                  sample_dataset, sample_prior_batch)
from .trees import (COMPILED_KERNEL, BoostedTreeRegressor, find_best_split,
                    sample_tree_hyperparams)

__all__ = [
    "ACTIVATION_KINDS", "RandomFourierActivation", "activation_layer",
    "sample_activation_kind", "standardize", "DataError",
    "DegenerateTargetError", "PriorConfig", "PriorSamplingError",
    "SyntheticDataset", "discretize_target", "export_scatter_csv", "load_ticl",
    "save_ticl", "validate_dataset", "ScmGraph", "dataset_rng",
    "gen_scm_dataset", "gen_tree_scm_dataset", "sample_dataset",
    "sample_prior_batch", "COMPILED_KERNEL", "BoostedTreeRegressor",
    "find_best_split", "sample_tree_hyperparams",
]
