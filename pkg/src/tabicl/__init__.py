"""TabICL: a tabular in-context learner trained on synthetic priors.

Three chained transformers turn a table into predictions in one forward
pass: a column-wise set embedder, a row-wise interaction transformer, and a
dataset-wise in-context learner.  Everything runs on numpy through a small
reverse-mode tensor core; no GPU frameworks involved.
"""

from . import tensor_core
from .class_tree import ClassTree, build_tree, predict_hierarchical, tree_depth
from .column_embedder import ColumnEmbedder, ColumnEmbedderConfig, ISAB
from .icl_predictor import (IclConfig, IclPredictor, LabelFuser, ModelConfig,
                            TabICLModel, predict_dataset)
from .infer_engine import (EnsembleConfig, MemoryModel, Preprocessor,
                           ensemble_predict, estimate_memory, fit_preprocessor,
                           plan_batch, predict_file, predict_probs)
from .pretrainer import (LRSchedule, StageConfig, TrainProfile, get_profile,
                         load_checkpoint, lr_at, run_curriculum,
                         save_checkpoint, split_dataset, train_step)
from .prior_forge import (DataError, PriorConfig, SyntheticDataset, load_ticl,
                          sample_dataset, sample_prior_batch, save_ticl)
from .row_interactor import RoPEConfig, RowInteractor, RowInteractorConfig
from .tensor_core import (NumericError, Tensor, grad_check, no_grad, precision)

__version__ = "0.1.0"

__all__ = [
    "tensor_core", "ClassTree", "build_tree", "predict_hierarchical",
    "tree_depth", "ColumnEmbedder", "ColumnEmbedderConfig", "ISAB",
    "IclConfig", "IclPredictor", "LabelFuser", "ModelConfig", "TabICLModel",
    "predict_dataset", "EnsembleConfig", "MemoryModel", "Preprocessor",
    "ensemble_predict", "estimate_memory", "fit_preprocessor", "plan_batch",
    "predict_file", "predict_probs", "LRSchedule", "StageConfig",
    "TrainProfile", "get_profile", "load_checkpoint", "lr_at",
    "run_curriculum", "save_checkpoint", "split_dataset", "train_step",
    "DataError", "PriorConfig", "SyntheticDataset", "load_ticl",
    "sample_dataset", "sample_prior_batch", "save_ticl", "RoPEConfig",
    "RowInteractor", "RowInteractorConfig", "NumericError", "Tensor",
    "grad_check", "no_grad", "precision", "__version__",
]
