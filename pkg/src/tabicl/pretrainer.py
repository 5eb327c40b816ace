"""Curriculum pretraining.

Three stages grow the synthetic dataset size while shrinking the learning
rate; the last stage trains only the ICL transformer (plus its label fuser
and head) with everything else frozen.  The full-scale `paper` profile is
recorded for reference; the `desk` profile runs the same code path in
minutes.

Losses are standard PFN-style: split each synthetic dataset into context and
held-out rows, z-normalize features by context statistics, and take the
cross-entropy of the held-out rows in a single forward pass.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_core as tc
from .icl_predictor import ModelConfig, TabICLModel, canonical_codes
from .prior_forge import DataError, PriorConfig, sample_prior_batch
from .tensor_core import Tensor


# --- learning-rate schedules -----------------------------------------------

@dataclass
class LRSchedule:
    kind: str = "polynomial"
    # polynomial
    lr_init: float = 2e-5
    lr_end: float = 5e-6
    T: int = 2000
    # cosine_with_restarts
    peak: float = 2e-4
    floor: float = 1e-5
    period: int = 2000
    restart_decay: float = 0.8
    # constant
    value: float = 5e-6


def lr_at(schedule: LRSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    k = schedule.kind
    if k == "polynomial":
        if step >= schedule.T:
            return schedule.lr_end
        frac = 1.0 - step / schedule.T
        return (schedule.lr_init - schedule.lr_end) * frac * frac + schedule.lr_end
    if k == "cosine_with_restarts":
        cycle, pos = divmod(step, schedule.period)
        amp = (schedule.peak - schedule.floor) * schedule.restart_decay ** cycle
        return schedule.floor + 0.5 * amp * (1.0 + math.cos(math.pi * pos / schedule.period))
    if k == "constant":
        return schedule.value
    raise ValueError(f"unknown schedule kind {k!r}")


# --- optimizer -------------------------------------------------------------

class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def clip_gradients(self, names=None):
        """Scale gradients so their global L2 norm is at most clip_norm."""
        names = list(self.params if names is None else names)
        sq = 0.0
        for k in names:
            g = self.params[k].grad
            if g is not None:
                sq += float(np.dot(g.reshape(-1), g.reshape(-1)))
        norm = math.sqrt(sq)
        if norm > self.clip_norm:
            scale = self.clip_norm / norm
            for k in names:
                g = self.params[k].grad
                if g is not None:
                    self.params[k].grad = g * scale
        return norm

    def step(self, lr, names=None):
        names = list(self.params if names is None else names)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k in names:
            p = self.params[k]
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            p.data = p.data - (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self, names=None):
        for k in (self.params if names is None else names):
            self.params[k].grad = None


# --- stages and profiles ---------------------------------------------------

@dataclass
class StageConfig:
    stage_id: int
    n_b: int
    size_law: tuple  # ("fixed", n) | ("log_uniform", lo, hi) | ("uniform", lo, hi)
    steps: int
    datasets_per_step: int
    trainable: str  # "all" | "icl_only"
    schedule: LRSchedule

    def draw_size(self, rng):
        law = self.size_law
        if law[0] == "fixed":
            return int(law[1])
        if law[0] == "log_uniform":
            return int(round(np.exp(rng.uniform(np.log(law[1]), np.log(law[2])))))
        if law[0] == "uniform":
            return int(rng.integers(law[1], law[2] + 1))
        raise ValueError(f"unknown size law {law[0]!r}")


@dataclass
class TrainProfile:
    name: str
    model: ModelConfig
    prior: PriorConfig
    stages: list


def get_profile(name: str) -> TrainProfile:
    cosine = LRSchedule(kind="cosine_with_restarts", peak=2e-4, floor=1e-5,
                        restart_decay=0.8)
    poly = LRSchedule(kind="polynomial", lr_init=2e-5, lr_end=5e-6, T=2000)
    const = LRSchedule(kind="constant", value=5e-6)
    if name == "paper":
        return TrainProfile(
            name="paper",
            model=ModelConfig(),
            prior=PriorConfig(n_samples=(128, 1024), n_features=(2, 100)),
            stages=[
                StageConfig(1, 4, ("fixed", 1024), 160_000, 512, "all",
                            replace(cosine, period=20_000)),
                StageConfig(2, 1, ("log_uniform", 1_000, 40_000), 2_000, 512,
                            "all", poly),
                StageConfig(3, 1, ("uniform", 40_000, 60_000), 50, 512,
                            "icl_only", const),
            ])
    if name == "desk":
        return TrainProfile(
            name="desk",
            model=ModelConfig.desk(),
            prior=PriorConfig(),
            stages=[
                StageConfig(1, 4, ("fixed", 256), 300, 32, "all",
                            replace(cosine, period=2_000)),
                StageConfig(2, 1, ("log_uniform", 256, 2_048), 50, 8, "all", poly),
                StageConfig(3, 1, ("uniform", 2_048, 4_096), 10, 2, "icl_only",
                            const),
            ])
    raise DataError(f"unknown profile {name!r}")


# --- data plumbing ---------------------------------------------------------

def split_dataset(ds, rng, max_tries=10):
    """Random context/held-out split with train fraction ~ U[0.3, 0.9].

    Both parts must contain every class; resampled up to `max_tries` times.
    Returns (train_idx, test_idx).
    """
    n = ds.n
    if n < 10:
        raise DataError("split_dataset needs n >= 10")
    for _ in range(max_tries):
        frac = rng.uniform(0.3, 0.9)
        n_train = min(max(int(round(frac * n)), 1), n - 1)
        perm = rng.permutation(n)
        tr, te = perm[:n_train], perm[n_train:]
        cov_tr = np.bincount(ds.y[tr], minlength=ds.C).min()
        cov_te = np.bincount(ds.y[te], minlength=ds.C).min()
        if cov_tr >= 1 and cov_te >= 1:
            return tr, te
    raise DataError("could not cover every class in both split parts")


def _znorm_by_train(X, tr_idx):
    mu = X[tr_idx].mean(axis=0)
    sd = X[tr_idx].std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (X - mu) / sd


def dataset_loss(model, ds, rng, trainable="all"):
    """Cross-entropy of the held-out partition; a Tensor (graph attached).

    Labels are canonicalized by first appearance in the context exactly as
    at inference time, so the model is trained on the coded label space it
    will be queried in.
    """
    tr, te = split_dataset(ds, rng)
    order = np.concatenate([tr, te])
    X = _znorm_by_train(np.asarray(ds.X, dtype=np.float64), tr)[order]
    X = X.astype(tc.default_dtype())
    y = canonical_codes(ds.y[tr], ds.C)[ds.y[order]]
    n_train = tr.size
    if trainable == "icl_only":
        with tc.no_grad():
            H = model.embed_rows(X, n_train)
        H = Tensor(H.data)
    else:
        H = model.embed_rows(X, n_train)
    fused = model.fuser(H, y[:n_train], ds.C)
    logits = model.icl.logits(fused, n_train)
    return tc.cross_entropy(logits, y[n_train:], n_classes=ds.C)


def trainable_names(model, scope):
    names = model.named_parameters()
    if scope == "all":
        return list(names)
    if scope == "icl_only":
        return [k for k in names if k.startswith(("icl.", "fuser."))]
    raise ValueError(f"unknown trainable scope {scope!r}")


def train_step(model, datasets, n_b, opt, lr, rng, trainable="all"):
    """One optimizer step over `datasets` with micro-batches of n_b.

    Datasets whose split cannot cover every class are skipped (the gradient
    is renormalized by the used count), so a long curriculum never dies on
    one unlucky draw.  Returns the mean loss over used datasets, or None
    when every dataset was skipped or a non-finite loss aborted the step.
    """
    if len(datasets) % n_b:
        raise DataError("dataset count must divide into micro-batches of n_b")
    names = trainable_names(model, trainable)
    opt.zero_grad()
    total, used = 0.0, 0
    with tc.finite_checks(False):
        for start in range(0, len(datasets), n_b):
            for ds in datasets[start:start + n_b]:
                try:
                    loss = dataset_loss(model, ds, rng, trainable)
                except DataError:
                    continue
                val = float(loss.data)
                if not math.isfinite(val):
                    opt.zero_grad()
                    return None
                loss.backward()
                total += val
                used += 1
    if not used:
        opt.zero_grad()
        return None
    inv = 1.0 / used
    params = model.named_parameters()
    for k in names:
        if params[k].grad is not None:
            params[k].grad *= inv
    opt.clip_gradients(names)
    opt.step(lr, names)
    return total * inv


def evaluate_loss(model, datasets, seed=0):
    """Mean held-out cross-entropy at fixed weights (no training)."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5E)))
    vals = []
    with tc.no_grad():
        for ds in datasets:
            try:
                vals.append(float(dataset_loss(model, ds, rng, "icl_only").data))
            except DataError:
                continue
    if not vals:
        raise DataError("no dataset could be split for evaluation")
    return float(np.mean(vals))


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(model, path, extra=None):
    """JSON manifest (name -> shape/offset/dtype) + little-endian f32 blobs."""
    params = model.named_parameters()
    tensors, blobs, offset = {}, [], 0
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        tensors[name] = {"shape": list(arr.shape), "offset": offset,
                         "dtype": "float32"}
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = {
        "format": "tabicl-checkpoint",
        "version": 1,
        "model_config": model.config.to_dict(),
        "extra": extra or {},
        "tensors": tensors,
    }
    header = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path, seed=0):
    """Rebuild the model from a checkpoint; returns (model, manifest)."""
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) < 4:
            raise DataError(f"{path}: truncated checkpoint")
        hlen = int.from_bytes(raw, "little")
        header = fh.read(hlen)
        if len(header) < hlen:
            raise DataError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: bad manifest ({exc})") from exc
        blob = fh.read()
    if manifest.get("format") != "tabicl-checkpoint":
        raise DataError(f"{path}: not a checkpoint file")
    config = ModelConfig.from_dict(manifest["model_config"])
    model = TabICLModel(config, seed=seed)
    params = model.named_parameters()
    if set(params) != set(manifest["tensors"]):
        raise DataError(f"{path}: parameter names do not match the model config")
    for name, meta in manifest["tensors"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        arr = arr.reshape(shape).astype(tc.default_dtype())
        if params[name].data.shape != arr.shape:
            raise DataError(f"{path}: shape mismatch for {name}")
        params[name].data = arr.copy()
    return model, manifest


# --- the curriculum --------------------------------------------------------

def run_curriculum(profile, seed, out_dir, log_every=25, on_step=None,
                   run_config=None):
    """Run every stage of `profile`; returns the final checkpoint path.

    Writes per-stage checkpoints, a final checkpoint, and a loss log CSV
    `step,stage,lr,loss` under `out_dir`.  Progress goes to stderr every
    `log_every` steps; `run_config` entries are folded into the provenance
    line and checkpoint metadata.
    """
    if isinstance(profile, str):
        profile = get_profile(profile)
    os.makedirs(out_dir, exist_ok=True)
    model = TabICLModel(profile.model, seed=seed)
    opt = Adam(model.named_parameters())
    split_rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xD5)))
    size_rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x51)))
    rows = []
    global_step = 0
    ds_counter = 0
    final_path = os.path.join(out_dir, "model.ckpt")
    run_info = {"profile": profile.name, "seed": int(seed)}
    if run_config:
        run_info.update(run_config)
    for stage in profile.stages:
        for s in range(stage.steps):
            lr = lr_at(stage.schedule, s)
            datasets = []
            for _ in range(stage.datasets_per_step // stage.n_b):
                size = stage.draw_size(size_rng)
                datasets.extend(sample_prior_batch(
                    stage.n_b, profile.prior, seed, start_index=ds_counter, n=size))
                ds_counter += stage.n_b
            loss = train_step(model, datasets, stage.n_b, opt, lr, split_rng,
                              trainable=stage.trainable)
            rows.append((global_step, stage.stage_id, lr,
                         float("nan") if loss is None else loss))
            if on_step is not None:
                on_step(global_step, stage.stage_id, lr, loss)
            if log_every and global_step % log_every == 0:
                print(f"stage {stage.stage_id} step {s}/{stage.steps} "
                      f"lr {lr:.3g} loss {loss if loss is None else round(loss, 4)}",
                      file=sys.stderr)
            global_step += 1
        save_checkpoint(model, os.path.join(out_dir, f"stage{stage.stage_id}.ckpt"),
                        extra={**run_info, "stage": stage.stage_id})
    save_checkpoint(model, final_path, extra={**run_info, "stage": "final"})
    with open(os.path.join(out_dir, "loss_log.csv"), "w", newline="") as fh:
        fh.write(f"# run_config: {json.dumps(run_info)}\n")
        writer = csv.writer(fh)
        writer.writerow(["step", "stage", "lr", "loss"])
        for row in rows:
            writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
    return final_path
