"""Dataset-wise in-context prediction (TF_icl) and the assembled model.

Train labels are one-hot encoded, linearly projected, and added to the row
embeddings of the train rows only.  A masked transformer then lets every
row (train and test alike) attend exclusively to train rows, and a two-layer
MLP head turns the final test states into logits over at most c_max classes.
Probabilities for a C-class task come from a softmax over the first C logits;
the remaining classes are masked out and receive exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .tensor_core import (AttentionMask, FeedForward, LayerNorm, LinearLayer,
                          Module, ModuleList, MultiHeadAttention, Tensor)
from .column_embedder import ColumnEmbedder, ColumnEmbedderConfig
from .row_interactor import RowInteractor, RowInteractorConfig, SelfAttentionBlock


@dataclass
class IclConfig:
    model_dim: int = 512
    layers: int = 12
    heads: int = 4
    c_max: int = 10
    head_hidden: int = 512

    def validate(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")


def one_hot(y, c_max, dtype=None):
    y = np.asarray(y)
    out = np.zeros((y.shape[0], c_max), dtype=dtype or tc.default_dtype())
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def canonical_codes(y_train, C):
    """Class -> code map (length C) by order of first appearance in y_train.

    The class seen first gets code 0, the next distinct class code 1, and so
    on; classes absent from y_train take the remaining codes in ascending
    class order.  Relabeling classes by any permutation leaves the coded
    label sequence unchanged, which is what makes prediction exactly
    class-shuffle equivariant (provided every class occurs in the context).
    """
    y_train = np.asarray(y_train)
    code_of = np.full(C, -1, dtype=np.int64)
    nxt = 0
    for v in y_train:
        if code_of[v] < 0:
            code_of[v] = nxt
            nxt += 1
            if nxt == C:
                break
    for c in range(C):
        if code_of[c] < 0:
            code_of[c] = nxt
            nxt += 1
    return code_of


class LabelFuser(Module):
    """Linear projection of one-hot labels into the row-embedding space."""

    def __init__(self, c_max, model_dim, rng):
        super().__init__()
        self.c_max = c_max
        self.proj = LinearLayer(c_max, model_dim, rng, bias=False)

    def __call__(self, H, y_train, C):
        """Add projected labels to the first len(y_train) rows of H."""
        y_train = np.asarray(y_train)
        if not 2 <= C <= self.c_max:
            raise ValueError(f"C={C} outside [2, {self.c_max}]; use the class tree")
        if y_train.size and (y_train.min() < 0 or y_train.max() >= C):
            raise ValueError("labels out of range [0, C)")
        n_train = y_train.shape[0]
        oh = Tensor(one_hot(y_train, self.c_max, H.dtype))
        fused_train = tc.add(H[:n_train], self.proj(oh))
        return tc.concat([fused_train, H[n_train:]], axis=0)


class IclPredictor(Module):
    def __init__(self, config: IclConfig, rng):
        super().__init__()
        config.validate()
        self.config = config
        self.blocks = ModuleList(
            [SelfAttentionBlock(config.model_dim, config.heads, rng)
             for _ in range(config.layers)])
        self.out_ln = LayerNorm(config.model_dim)
        self.head1 = LinearLayer(config.model_dim, config.head_hidden, rng)
        self.head2 = LinearLayer(config.head_hidden, config.c_max, rng)

    def logits(self, h_fused, n_train):
        """Masked transformer + MLP head; returns test-row logits (n_test, c_max)."""
        n = h_fused.shape[0]
        if n_train < 1:
            raise ValueError("need at least one train row")
        if n_train >= n:
            raise ValueError("need at least one test row")
        mask = AttentionMask.keys_restricted_to(n_train)
        x = h_fused
        for blk in self.blocks:
            x = blk(x, mask=mask)
        x = self.out_ln(x[n_train:])
        return self.head2(tc.gelu(self.head1(x)))

    def __call__(self, h_fused, n_train, C):
        """Class probabilities (n_test, C) for the test rows."""
        logits = self.logits(h_fused, n_train)
        if C < self.config.c_max:
            bias = np.zeros(self.config.c_max, dtype=logits.dtype.type)
            bias[C:] = AttentionMask.NEG
            logits = tc.add(logits, Tensor(bias))
        probs = tc.softmax(logits, axis=-1)
        return probs[:, :C]


def fuse_labels(H, y_train, C, fuser):
    return fuser(H, y_train, C)


def icl_forward(h_fused, n_train, C, predictor):
    return predictor(h_fused, n_train, C)


@dataclass
class ModelConfig:
    """Dimensions of the three transformers.

    Defaults follow the reference configuration (d=128, 512-dim row
    embeddings, 12 ICL layers); `desk()` returns the small profile used for
    quick pretraining runs.
    """

    col: ColumnEmbedderConfig = field(default_factory=ColumnEmbedderConfig)
    row: RowInteractorConfig = field(default_factory=RowInteractorConfig)
    icl: IclConfig = field(default_factory=IclConfig)

    def validate(self):
        if self.row.d != self.col.d:
            raise ValueError("row.d must equal col.d")
        if self.icl.model_dim != self.row.out_dim:
            raise ValueError("icl.model_dim must equal row n_cls*d")

    @classmethod
    def desk(cls):
        # shallow on purpose: at a few hundred optimizer steps the smaller
        # stack trains noticeably further than deeper variants of the same width
        return cls(
            col=ColumnEmbedderConfig(d=32, k_inducing=16, n_isab=1, heads=4),
            row=RowInteractorConfig(d=32, layers=1, heads=4, n_cls=4),
            icl=IclConfig(model_dim=128, layers=2, heads=2, c_max=10, head_hidden=128),
        )

    def to_dict(self):
        return {
            "col": vars(self.col).copy(),
            "row": vars(self.row).copy(),
            "icl": vars(self.icl).copy(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(col=ColumnEmbedderConfig(**d["col"]),
                   row=RowInteractorConfig(**d["row"]),
                   icl=IclConfig(**d["icl"]))


class TabICLModel(Module):
    """Column embedder -> row interactor -> label fusion -> ICL transformer."""

    def __init__(self, config: ModelConfig, seed=0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xABC)))
        self.col = ColumnEmbedder(config.col, rng)
        self.row = RowInteractor(config.row, rng)
        self.fuser = LabelFuser(config.icl.c_max, config.icl.model_dim, rng)
        self.icl = IclPredictor(config.icl, rng)
        self.embed_calls = 0

    @property
    def c_max(self):
        return self.config.icl.c_max

    def embed_rows(self, X, n_train, workers=1):
        """X: (n, m) -> row embeddings H: Tensor (n, 4d)."""
        self.embed_calls += 1
        E = self.col.embed_table(X, n_train, workers=workers)
        return self.row(E)

    def classify_from_h(self, H, y_ctx, n_train, C):
        """Probabilities Tensor (n_test, C) given precomputed row embeddings.

        Context labels are canonicalized by first appearance before fusion
        and the output columns are mapped back, so permuting class indices
        permutes the returned columns bit-for-bit.
        """
        y_ctx = np.asarray(y_ctx)
        code_of = canonical_codes(y_ctx, C)
        fused = self.fuser(H, code_of[y_ctx], C)
        probs = self.icl(fused, n_train, C)
        return probs[:, code_of]

    def forward_probs(self, X, y_train, n_train, C, workers=1):
        H = self.embed_rows(X, n_train, workers=workers)
        return self.classify_from_h(H, np.asarray(y_train), n_train, C)

    def predict(self, X, y_train, n_train, C, workers=1):
        """Numpy probabilities (n_test, C); no graph is retained."""
        with tc.no_grad():
            return self.forward_probs(X, y_train, n_train, C, workers=workers).data


def predict_dataset(X, y_train, split, model, C):
    """Full pipeline with a fractional train/test split of X's rows.

    The first round(split*n) rows are the labeled context; the rest are
    scored.  Returns a numpy array (n_test, C).
    """
    X = np.asarray(X)
    n = X.shape[0]
    n_train = int(round(split * n))
    if not 1 <= n_train < n:
        raise ValueError(f"split {split} leaves no train or no test rows for n={n}")
    y_train = np.asarray(y_train)
    if y_train.shape[0] != n_train:
        raise ValueError("y_train length must match the train partition")
    return model.predict(X, y_train, n_train, C)
