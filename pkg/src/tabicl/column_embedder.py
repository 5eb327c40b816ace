"""Column-wise set embedding (TF_col).

Each table column is a set of n scalar cells.  A shared Set Transformer maps
the set to per-cell d-dim states V, from which two linear heads read off a
weight and a bias vector per cell; the final embedding is e = W * x + B.
Induced self-attention (ISAB) keeps the cost linear in n: a small bank of
inducing vectors attends to the cells, then the cells attend back to the
bank.  Only train cells ever act as keys/values in the first hop, so the
column summary M is a function of the train rows alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .tensor_core import (FeedForward, LayerNorm, LinearLayer, Module,
                          ModuleList, MultiHeadAttention, NumericError, Tensor)


@dataclass
class ColumnEmbedderConfig:
    d: int = 128
    k_inducing: int = 128
    n_isab: int = 3
    heads: int = 4

    def validate(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        if self.k_inducing < 1:
            raise ValueError("k_inducing must be >= 1")


class CrossAttentionBlock(Module):
    """Pre-norm attention + feed-forward with separate query and key/value sets."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        self.ln_q = LayerNorm(dim)
        self.ln_kv = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln_ff = LayerNorm(dim)
        self.ff = FeedForward(dim, rng)

    def __call__(self, q, kv):
        kvn = self.ln_kv(kv)
        x = tc.add(q, self.attn(self.ln_q(q), kvn, kvn))
        return tc.add(x, self.ff(self.ln_ff(x)))


class ISAB(Module):
    """Induced self-attention block with its own inducing vectors.

    Works on a batched stack of columns u: (m, n, d).  The first hop uses
    only the leading n_train cells as keys/values, so its output M carries
    no information about test cells.
    """

    def __init__(self, dim, k, heads, rng):
        super().__init__()
        init = (rng.standard_normal((k, dim)) / np.sqrt(dim)).astype(tc.default_dtype())
        self.inducing = Tensor(init, requires_grad=True)
        self.mab1 = CrossAttentionBlock(dim, heads, rng)
        self.mab2 = CrossAttentionBlock(dim, heads, rng)

    def __call__(self, u, n_train):
        m = u.shape[0]
        ind = tc.broadcast_to(self.inducing, (m,) + self.inducing.shape)
        summary = self.mab1(ind, u[:, :n_train, :])
        return self.mab2(u, summary), summary


def isab_forward(u, n_train, block):
    """Run one ISAB block on a single column u: (n, d) -> (n, d)."""
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    u3 = tc.reshape(u, (1,) + tuple(u.shape))
    out, _ = block(u3, n_train)
    return tc.reshape(out, u.shape)


class ColumnEmbedder(Module):
    def __init__(self, config: ColumnEmbedderConfig, rng):
        super().__init__()
        config.validate()
        self.config = config
        d = config.d
        self.lin_in = LinearLayer(1, d, rng)
        self.blocks = ModuleList(
            [ISAB(d, config.k_inducing, config.heads, rng) for _ in range(config.n_isab)])
        self.out_ln = LayerNorm(d)
        self.head_w = LinearLayer(d, d, rng)
        self.head_b = LinearLayer(d, d, rng)

    def _forward_columns(self, cols, n_train):
        """cols: Tensor (m, n, 1) -> (W, B, E, M) with E = W*x + B, all (m, n, d)."""
        u = self.lin_in(cols)
        summary = None
        for blk in self.blocks:
            u, summary = blk(u, n_train)
        v = self.out_ln(u)
        w = self.head_w(v)
        b = self.head_b(v)
        e = tc.add(tc.mul(w, cols), b)
        return w, b, e, summary

    def embed_column(self, c, n_train):
        """Embed one column c: (n,) -> Tensors (W, B, e), each (n, d)."""
        c = np.asarray(c)
        if not np.all(np.isfinite(c)):
            raise NumericError("non-finite column values")
        if not 1 <= n_train <= c.shape[0]:
            raise ValueError("n_train out of range")
        cols = Tensor(c.reshape(1, -1, 1))
        w, b, e, _ = self._forward_columns(cols, n_train)
        n = c.shape[0]
        d = self.config.d
        return (tc.reshape(w, (n, d)), tc.reshape(b, (n, d)), tc.reshape(e, (n, d)))

    def embed_table(self, X, n_train, workers=1, return_parts=False):
        """Embed all columns of X: (n, m) -> E Tensor (n, m, d).

        `workers` chunks the columns; results are concatenated in order, so
        the output is independent of the chunking.
        """
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("X must be 2-D with at least one column")
        if not np.all(np.isfinite(X)):
            raise NumericError("non-finite table values")
        n, m = X.shape
        if not 1 <= n_train <= n:
            raise ValueError("n_train out of range")
        cols_np = np.ascontiguousarray(X.T)[:, :, None]
        chunks = np.array_split(np.arange(m), max(1, min(workers, m)))
        ws, bs, es, summaries = [], [], [], []
        for idx in chunks:
            if idx.size == 0:
                continue
            w, b, e, s = self._forward_columns(Tensor(cols_np[idx]), n_train)
            ws.append(w)
            bs.append(b)
            es.append(e)
            summaries.append(s)
        e_all = es[0] if len(es) == 1 else tc.concat(es, axis=0)
        E = tc.transpose(e_all, (1, 0, 2))
        if not return_parts:
            return E
        w_all = ws[0] if len(ws) == 1 else tc.concat(ws, axis=0)
        b_all = bs[0] if len(bs) == 1 else tc.concat(bs, axis=0)
        s_all = summaries[0] if len(summaries) == 1 else tc.concat(summaries, axis=0)
        return (E, tc.transpose(w_all, (1, 0, 2)), tc.transpose(b_all, (1, 0, 2)), s_all)


def summarize_column(m_final):
    """Collapse a column's inducing-bank output (k, d) to a d-vector by summation."""
    m_final = np.asarray(m_final)
    return m_final.sum(axis=0)


def export_column_summaries(model, X, n_train, path):
    """Write one summary vector per column: `col_id,dim_0..dim_{d-1}`."""
    with tc.no_grad():
        _, _, _, summaries = model.embed_table(X, n_train, return_parts=True)
    d = model.config.d
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["col_id"] + [f"dim_{i}" for i in range(d)])
        for j in range(summaries.shape[0]):
            vec = summarize_column(summaries.data[j])
            writer.writerow([j] + [repr(float(v)) for v in vec])
