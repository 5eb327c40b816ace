"""Row-wise interaction (TF_row).

For each row the m feature embeddings plus 4 learnable CLS tokens form a
sequence of length m+4 processed by a small self-attention stack.  Rotary
position encoding with a large base breaks the symmetry between columns
whose marginal distributions are identical; without it, permuting features
provably permutes nothing (the CLS states are invariant).  The output row
embedding H is the concatenation of the 4 final CLS states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .tensor_core import (FeedForward, LayerNorm, Module, ModuleList,
                          MultiHeadAttention, Tensor)


@dataclass
class RoPEConfig:
    head_dim: int
    base: float = 100000.0

    def validate(self):
        if self.head_dim % 2:
            raise ValueError("head_dim must be even")
        if self.base <= 1:
            raise ValueError("base must exceed 1")


def rope_angles(positions, head_dim, base):
    """Angle matrix (len(positions), head_dim/2): theta_i = p / base^(2i/head_dim)."""
    positions = np.asarray(positions, dtype=np.float64)
    i = np.arange(head_dim // 2, dtype=np.float64)
    inv_freq = base ** (-2.0 * i / head_dim)
    return positions[:, None] * inv_freq[None, :]


def rope_tables(n_positions, head_dim, base, dtype):
    ang = rope_angles(np.arange(n_positions), head_dim, base)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def rope_rotate(x, p, config: RoPEConfig):
    """Rotate every vector in x (*, head_dim) as if it sat at position p."""
    config.validate()
    ang = rope_angles([p], config.head_dim, config.base)
    x = tc.as_tensor(x)
    cos = np.cos(ang).astype(x.dtype)[0]
    sin = np.sin(ang).astype(x.dtype)[0]
    return tc.rope_rotate(x, cos, sin)


@dataclass
class RowInteractorConfig:
    d: int = 128
    layers: int = 3
    heads: int = 8
    n_cls: int = 4
    rope_base: float = 100000.0
    rope_enabled: bool = True

    @property
    def out_dim(self):
        return self.n_cls * self.d

    def validate(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")


class SelfAttentionBlock(Module):
    """Pre-norm self-attention + feed-forward over the last-but-one axis."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff = FeedForward(dim, rng)

    def __call__(self, x, mask=None, rope=None):
        xn = self.ln1(x)
        x = tc.add(x, self.attn(xn, xn, xn, mask=mask, rope=rope))
        return tc.add(x, self.ff(self.ln2(x)))


class RowInteractor(Module):
    def __init__(self, config: RowInteractorConfig, rng):
        super().__init__()
        config.validate()
        self.config = config
        d = config.d
        init = (rng.standard_normal((config.n_cls, d)) / np.sqrt(d)).astype(tc.default_dtype())
        self.cls_tokens = Tensor(init, requires_grad=True)
        self.blocks = ModuleList(
            [SelfAttentionBlock(d, config.heads, rng) for _ in range(config.layers)])
        self.out_ln = LayerNorm(d)

    def __call__(self, E):
        """E: Tensor (n, m, d) -> H: Tensor (n, n_cls*d)."""
        n, m, d = E.shape
        cfg = self.config
        cls = tc.broadcast_to(self.cls_tokens, (n, cfg.n_cls, d))
        x = tc.concat([cls, E], axis=1)
        rope = None
        if cfg.rope_enabled:
            head_dim = d // cfg.heads
            rope = rope_tables(cfg.n_cls + m, head_dim, cfg.rope_base, x.dtype)
        for blk in self.blocks:
            x = blk(x, rope=rope)
        x = self.out_ln(x)
        h = x[:, :cfg.n_cls, :]
        return tc.reshape(h, (n, cfg.n_cls * d))


def collapse_probe(model, X, n_train=None, tol=1e-4):
    """Count pairwise-distinguishable row embeddings of X at L-inf tolerance.

    `model` is anything with an ``embed_rows(X, n_train)`` method returning
    the (n, 4d) row embeddings.  Diagnostic for representation collapse on
    tables whose columns are identically distributed.
    """
    X = np.asarray(X)
    if n_train is None:
        n_train = X.shape[0]
    with tc.no_grad():
        H = model.embed_rows(X, n_train)
    H = H.data if isinstance(H, Tensor) else np.asarray(H)
    reps = []
    for row in H:
        if not any(np.max(np.abs(row - r)) <= tol for r in reps):
            reps.append(row)
    return len(reps)
