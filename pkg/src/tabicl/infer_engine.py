"""Inference pipeline: preprocessing, ensembling, memory planning, CSV I/O.

The memory model is the fitted affine-bilinear law
MEM = a1*batch + a2*seq + a3*batch*seq + a4 (MB) per transformer, used to
plan the largest batch that fits a budget.  Ensembling averages up to 32
member predictions obtained under random column and class permutations and
two preprocessor kinds, then undoes each member's class permutation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .class_tree import build_tree, predict_hierarchical
from .prior_forge import DataError

# fitted coefficients (a1, a2, a3, a4) in MB for the reference model;
# batch/seq mean features x samples (col), samples x features (row),
# datasets x samples (icl)
DEFAULT_MEMORY_COEFFS = {
    "col": (0.0708, 7.29e-6, 0.00391, 137.62),
    "row": (-2.07e-5, 2.27e-4, 0.00537, 138.54),
    "icl": (-0.260, 4.77e-7, 0.0195, 140.58),
}


@dataclass
class MemoryModel:
    coeffs: dict = field(default_factory=lambda: {k: tuple(v) for k, v in
                                                  DEFAULT_MEMORY_COEFFS.items()})

    def get(self, which):
        if which not in self.coeffs:
            raise DataError(f"unknown transformer {which!r}")
        return self.coeffs[which]

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        coeffs = {}
        for which in ("col", "row", "icl"):
            if which not in raw:
                raise DataError(f"memory model json missing {which!r}")
            vals = raw[which]
            if len(vals) != 4:
                raise DataError(f"memory model {which!r} needs 4 coefficients")
            coeffs[which] = tuple(float(v) for v in vals)
        return cls(coeffs=coeffs)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({k: list(v) for k, v in self.coeffs.items()}, fh, indent=2)


def estimate_memory(which, batch, seq, model: MemoryModel | None = None):
    """MEM_which(batch, seq) in MB."""
    if batch < 1 or seq < 1:
        raise DataError("batch and seq must be >= 1")
    a1, a2, a3, a4 = (model or MemoryModel()).get(which)
    return a1 * batch + a2 * seq + a3 * batch * seq + a4


def plan_batch(which, seq, budget_mb, model: MemoryModel | None = None):
    """Largest batch with estimate_memory <= budget_mb (at least 1)."""
    model = model or MemoryModel()
    a1, a2, a3, a4 = model.get(which)
    denom = a1 + a3 * seq
    if denom <= 0:
        raise DataError(f"memory law for {which!r} is non-increasing in batch "
                        f"at seq={seq}; planning undefined")
    if estimate_memory(which, 1, seq, model) > budget_mb:
        raise DataError(f"budget {budget_mb} MB below the cost of batch 1")
    b = int(np.floor((budget_mb - a2 * seq - a4) / denom))
    b = max(b, 1)
    while b > 1 and estimate_memory(which, b, seq, model) > budget_mb:
        b -= 1
    while estimate_memory(which, b + 1, seq, model) <= budget_mb:
        b += 1
    return b


# --- preprocessing ---------------------------------------------------------

_LAMBDA_GRID = np.linspace(-2.0, 2.0, 41)


def _yeo_johnson(x, lam):
    out = np.empty_like(x)
    pos = x >= 0
    if abs(lam) < 1e-12:
        out[pos] = np.log1p(x[pos])
    else:
        out[pos] = (np.power(x[pos] + 1.0, lam) - 1.0) / lam
    neg = ~pos
    if abs(lam - 2.0) < 1e-12:
        out[neg] = -np.log1p(-x[neg])
    else:
        out[neg] = -(np.power(1.0 - x[neg], 2.0 - lam) - 1.0) / (2.0 - lam)
    return out


def _yj_loglik(x, lam):
    y = _yeo_johnson(x, lam)
    var = y.var()
    if not np.isfinite(var) or var < 1e-12:
        return -np.inf
    n = x.shape[0]
    return -0.5 * n * np.log(var) + (lam - 1.0) * np.sum(np.sign(x) * np.log1p(np.abs(x)))


def _best_lambda(x):
    scores = [_yj_loglik(x, lam) for lam in _LAMBDA_GRID]
    return float(_LAMBDA_GRID[int(np.argmax(scores))])


def _parse_cell(value):
    if value is None:
        return np.nan
    s = str(value).strip()
    if s == "" or s.lower() in ("nan", "na"):
        return np.nan
    try:
        return float(s)
    except ValueError:
        return None  # marks a categorical cell


class Preprocessor:
    """Train-fitted column transform: ordinal-encode, impute, power, znorm.

    Categorical columns (any unparsable cell among train rows) are mapped to
    ordinals by first appearance in the train rows; unseen test categories
    become -1.  Missing numerics are imputed with train means.  Kind
    `power_then_znorm` additionally applies a per-column monotone power
    transform with lambda picked from a grid in [-2, 2] by Gaussian
    log-likelihood, before the final z-normalization.
    """

    def __init__(self, kind="znorm"):
        if kind not in ("znorm", "power_then_znorm"):
            raise DataError(f"unknown preprocessor kind {kind!r}")
        self.kind = kind
        self.cat_maps = {}
        self.impute = None
        self.lambdas = None
        self.mu = None
        self.sd = None

    def _encode(self, X_raw):
        X_raw = np.asarray(X_raw, dtype=object)
        n, m = X_raw.shape
        Z = np.empty((n, m), dtype=np.float64)
        for j in range(m):
            if j in self.cat_maps:
                cmap = self.cat_maps[j]
                Z[:, j] = [cmap.get(str(v).strip(), -1.0) for v in X_raw[:, j]]
            else:
                col = [_parse_cell(v) for v in X_raw[:, j]]
                Z[:, j] = [np.nan if c is None else c for c in col]
        return Z

    def fit(self, X_train):
        X_train = np.asarray(X_train, dtype=object)
        if X_train.ndim != 2 or X_train.shape[0] < 2:
            raise DataError("fit_preprocessor needs a 2-D train block with n >= 2")
        n, m = X_train.shape
        # detect categorical columns on the train rows
        for j in range(m):
            cells = [_parse_cell(v) for v in X_train[:, j]]
            if any(c is None for c in cells):
                cmap, nxt = {}, 0
                for v in X_train[:, j]:
                    key = str(v).strip()
                    if key != "" and key not in cmap:
                        cmap[key] = float(nxt)
                        nxt += 1
                self.cat_maps[j] = cmap
        Z = self._encode(X_train)
        with np.errstate(invalid="ignore"):
            means = np.nanmean(Z, axis=0)
        self.impute = np.where(np.isfinite(means), means, 0.0)
        Z = np.where(np.isnan(Z), self.impute, Z)
        if self.kind == "power_then_znorm":
            self.lambdas = np.array([_best_lambda(Z[:, j]) for j in range(m)])
            Z = np.column_stack([_yeo_johnson(Z[:, j], self.lambdas[j])
                                 for j in range(m)])
        self.mu = Z.mean(axis=0)
        sd = Z.std(axis=0)
        self.sd = np.where(sd < 1e-12, 1.0, sd)
        return self

    def transform(self, X_raw):
        Z = self._encode(X_raw)
        Z = np.where(np.isnan(Z), self.impute, Z)
        if self.kind == "power_then_znorm":
            Z = np.column_stack([_yeo_johnson(Z[:, j], self.lambdas[j])
                                 for j in range(Z.shape[1])])
        return (Z - self.mu) / self.sd


def fit_preprocessor(X_train, kind="znorm"):
    return Preprocessor(kind).fit(X_train)


# --- prediction ------------------------------------------------------------

def predict_probs(model, Z, y_ctx, n_train, C, workers=1):
    """Flat prediction for C <= c_max, class-tree dispatch above; (n_test, C)."""
    y_ctx = np.asarray(y_ctx)
    with tc.no_grad():
        H = model.embed_rows(np.asarray(Z, dtype=tc.default_dtype()), n_train,
                             workers=workers)
        if C <= model.c_max:
            return model.classify_from_h(H, y_ctx, n_train, C).data
        return predict_hierarchical(build_tree(C, model.c_max), H, y_ctx, model)


@dataclass
class EnsembleConfig:
    members: int = 32
    seed: int = 0
    permute: bool = True
    preprocessors: tuple = ("znorm", "power_then_znorm")


def ensemble_predict(model, X_raw, y_train, n_train, C, config=None, workers=1):
    """Average member predictions over column/class permutations; (n_test, C).

    Member i draws its permutations from the stream (config.seed, i) and uses
    preprocessor kind i mod len(preprocessors), so kinds split evenly.  Each
    member's class permutation is inverted before averaging; the returned
    rows follow the input test-row order.
    """
    config = config or EnsembleConfig()
    if config.members < 1:
        raise DataError("ensemble needs at least one member")
    if C < 2:
        raise DataError("C must be >= 2")
    X_raw = np.asarray(X_raw, dtype=object)
    y_train = np.asarray(y_train)
    m = X_raw.shape[1]
    acc = None
    for i in range(config.members):
        rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), i)))
        kind = config.preprocessors[i % len(config.preprocessors)]
        if config.permute:
            col_perm = rng.permutation(m)
            class_perm = rng.permutation(C)
        else:
            col_perm = np.arange(m)
            class_perm = np.arange(C)
        Xp = X_raw[:, col_perm]
        prep = fit_preprocessor(Xp[:n_train], kind)
        Z = prep.transform(Xp)
        P = predict_probs(model, Z, class_perm[y_train], n_train, C, workers=workers)
        P = np.asarray(P, dtype=np.float64)[:, class_perm]
        acc = P if acc is None else acc + P
    return acc / config.members


def blocked_row_embeddings(model, Z, n_train, budget_mb=None, memory=None,
                           workers=1):
    """Row embeddings computed in planner-sized blocks of test rows.

    Interface stub for budgeted execution: the train rows always form one
    block (they define the column summaries); test rows are chunked to the
    batch size suggested by plan_batch on the row transformer.
    """
    Z = np.asarray(Z, dtype=tc.default_dtype())
    if budget_mb is None:
        return model.embed_rows(Z, n_train, workers=workers)
    block = plan_batch("row", max(Z.shape[1], 1), budget_mb, memory)
    n = Z.shape[0]
    if n_train + block >= n:
        return model.embed_rows(Z, n_train, workers=workers)
    parts = [model.embed_rows(Z[:n_train], n_train, workers=workers)]
    for start in range(n_train, n, block):
        stop = min(start + block, n)
        chunk = np.concatenate([Z[:n_train], Z[start:stop]], axis=0)
        parts.append(model.embed_rows(chunk, n_train, workers=workers)[n_train:])
    return tc.concat(parts, axis=0)


# --- CSV table I/O ---------------------------------------------------------

@dataclass
class ParsedTable:
    header: list
    feature_names: list
    X: np.ndarray  # object array, original row order
    target_raw: list  # raw target strings ('' for test rows)
    train_idx: np.ndarray
    test_idx: np.ndarray


def read_table_csv(path, target):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if target not in header:
        raise DataError(f"{path}: no column named {target!r}")
    t_col = header.index(target)
    feature_names = [h for i, h in enumerate(header) if i != t_col]
    data, target_raw = [], []
    for r_i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r_i} has {len(row)} cells, "
                            f"expected {len(header)}")
        target_raw.append(row[t_col].strip())
        data.append([row[i] for i in range(len(header)) if i != t_col])
    if not data:
        raise DataError(f"{path}: no data rows")
    X = np.array(data, dtype=object)
    marks = np.array([t != "" for t in target_raw])
    return ParsedTable(header=header, feature_names=feature_names, X=X,
                       target_raw=target_raw,
                       train_idx=np.flatnonzero(marks),
                       test_idx=np.flatnonzero(~marks))


def _label_order(values):
    """Deterministic class order: numeric when all labels parse, else lexical."""
    uniq = sorted(set(values))
    try:
        return sorted(uniq, key=lambda v: (float(v), v))
    except ValueError:
        return uniq


def predict_file(input_path, model, target, out_path=None, config=None,
                 workers=1, run_config=None):
    """Predict the unlabeled rows of a CSV; returns (row_ids, labels, P).

    Train rows are those with a non-empty target cell.  Classes are ordered
    numerically when every train label parses as a number, lexically
    otherwise.  When out_path is given, writes
    `row_id,pred_label,p_0..p_{C-1}` (row_id is the 0-based data-row index).
    """
    table = read_table_csv(input_path, target)
    if table.train_idx.size == 0:
        raise DataError("no labeled train rows")
    if table.test_idx.size == 0:
        raise DataError("no unlabeled test rows")
    train_labels = [table.target_raw[i] for i in table.train_idx]
    classes = _label_order(train_labels)
    if len(classes) < 2:
        raise DataError(f"label cardinality {len(classes)}; need >= 2")
    code = {c: i for i, c in enumerate(classes)}
    y_train = np.array([code[t] for t in train_labels], dtype=np.int64)
    order = np.concatenate([table.train_idx, table.test_idx])
    P = ensemble_predict(model, table.X[order], y_train, table.train_idx.size,
                         len(classes), config=config, workers=workers)
    pred = [classes[i] for i in np.argmax(P, axis=1)]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            if run_config:
                fh.write(f"# run_config: {json.dumps(run_config)}\n")
            writer = csv.writer(fh)
            writer.writerow(["row_id", "pred_label"]
                            + [f"p_{i}" for i in range(len(classes))])
            for r, row_id in enumerate(table.test_idx):
                writer.writerow([int(row_id), pred[r]]
                                + [f"{v:.6f}" for v in P[r]])
    return table.test_idx, pred, P
