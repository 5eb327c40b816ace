"""Command line interface.

Subcommands: gen-priors, pretrain, predict, eval, bench-time.  Flags can be
preloaded from a JSON config file (--config); explicitly passed flags win.
The seed resolves as --seed, then the TABICL_SEED environment variable,
then 0.  Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import tensor_core as tc
from .infer_engine import (EnsembleConfig, MemoryModel, ensemble_predict,
                           plan_batch, predict_file, predict_probs,
                           read_table_csv)
from .pretrainer import load_checkpoint, run_curriculum
from .prior_forge import (DataError, PriorConfig, export_scatter_csv,
                          sample_dataset, save_ticl)
from .tensor_core import NumericError


def resolve_seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get("TABICL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise DataError(f"TABICL_SEED={env!r} is not an integer")
    return 0


def load_config_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad JSON ({exc})")
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return raw


def merge_config(args, defaults):
    """defaults < config file < explicitly passed flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = load_config_file(args.config)
        for k, v in file_cfg.items():
            if k in defaults or k == "prior":
                cfg[k] = v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["seed"] = resolve_seed(cfg.get("seed"))
    return cfg


# --- metrics ---------------------------------------------------------------

def accuracy(y_true, P):
    y_true = np.asarray(y_true)
    return float(np.mean(np.argmax(P, axis=1) == y_true))


def _ranks_with_ties(scores):
    """1-based ranks, ties get the average rank of their group."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="mergesort")
    n = scores.shape[0]
    out = np.empty(n, dtype=np.float64)
    s = scores[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        out[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return out


def auc_ovr_macro(y_true, P):
    """Macro one-vs-rest AUC from rank statistics; None when undefined."""
    y_true = np.asarray(y_true)
    P = np.asarray(P, dtype=np.float64)
    aucs = []
    for c in range(P.shape[1]):
        pos = y_true == c
        n_pos = int(pos.sum())
        n_neg = int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = _ranks_with_ties(P[:, c])
        aucs.append((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0)
                    / (n_pos * n_neg))
    if not aucs:
        return None
    return float(np.mean(aucs))


def log_loss(y_true, P, eps=1e-15):
    y_true = np.asarray(y_true)
    p = np.clip(np.asarray(P, dtype=np.float64)[np.arange(len(y_true)), y_true],
                eps, 1.0)
    return float(-np.mean(np.log(p)))


# --- runtime scaling law ---------------------------------------------------

RUNTIME_GAMMA = 0.8


def runtime_x(n, m):
    """Size feature x = n * m * (n + m)."""
    return float(n) * float(m) * (float(n) + float(m))


def fit_runtime_scaling(xs, ts, gamma=RUNTIME_GAMMA, rounds=5, grid=41):
    """Fit time = alpha + beta * x^gamma by squared error in log-time.

    Coarse-to-fine 2-D grid over (log alpha, log beta); each round recenters
    on the best cell and shrinks the half-width by 4x.  Returns
    (alpha, beta, msle).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    if xs.shape[0] < 4:
        raise DataError("need at least 4 size points to fit the scaling law")
    if np.any(ts <= 0) or np.any(xs <= 0):
        raise DataError("timings and sizes must be positive")
    xg = xs ** gamma
    lt = np.log(ts)
    ca = np.log10(max(float(ts.min()) * 0.5, 1e-12))
    cb = np.log10(max(float(np.median(ts / xg)), 1e-16))
    width = 4.0
    best = (10.0 ** ca, 10.0 ** cb, np.inf)
    for _ in range(rounds):
        avals = 10.0 ** np.linspace(ca - width, ca + width, grid)
        bvals = 10.0 ** np.linspace(cb - width, cb + width, grid)
        pred = avals[:, None, None] + bvals[None, :, None] * xg[None, None, :]
        loss = np.mean((np.log(pred) - lt[None, None, :]) ** 2, axis=2)
        i, j = np.unravel_index(int(np.argmin(loss)), loss.shape)
        ca, cb = np.log10(avals[i]), np.log10(bvals[j])
        best = (float(avals[i]), float(bvals[j]), float(loss[i, j]))
        width /= 4.0
    return best


def time_forward(model, n, m, seed=0, repeats=3, workers=1):
    """Median wall-clock of `repeats` warm forward passes on an n x m table."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), n, m)))
    X = rng.standard_normal((n, m)).astype(tc.default_dtype())
    n_train = n // 2
    y = rng.integers(0, 2, size=n_train)
    if y.min() == y.max():  # force both classes into the context
        y[0] = 1 - y[0]

    def once():
        t0 = time.perf_counter()
        predict_probs(model, X, y, n_train, 2, workers=workers)
        return time.perf_counter() - t0

    once()  # discarded warm-up
    return float(np.median([once() for _ in range(repeats)]))


# --- subcommands -----------------------------------------------------------

def cmd_gen_priors(args):
    cfg = merge_config(args, {"count": 10, "out": None, "seed": None,
                              "scatter": 0})
    if not cfg["out"]:
        raise DataError("gen-priors needs --out")
    prior = PriorConfig.from_dict(cfg.get("prior", {}))
    os.makedirs(cfg["out"], exist_ok=True)
    run_config = {"command": "gen-priors", "count": int(cfg["count"]),
                  "seed": cfg["seed"], "scatter": int(cfg["scatter"]),
                  "prior": prior.to_dict()}
    entries = []
    for index in range(int(cfg["count"])):
        ds = sample_dataset(prior, cfg["seed"], index)
        name = f"ds_{index:05d}.ticl"
        save_ticl(ds, os.path.join(cfg["out"], name))
        entries.append({"name": name, "index": index,
                        "seed": [cfg["seed"], index], "kind": ds.kind,
                        "n": ds.n, "m": ds.m, "C": ds.C})
        if index < int(cfg["scatter"]) and ds.m >= 2:
            export_scatter_csv(ds, os.path.join(cfg["out"],
                                                f"ds_{index:05d}_scatter.csv"))
    with open(os.path.join(cfg["out"], "manifest.json"), "w") as fh:
        json.dump({"run_config": run_config, "files": entries}, fh, indent=2)
    print(f"wrote {len(entries)} datasets to {cfg['out']}")
    return 0


def cmd_pretrain(args):
    cfg = merge_config(args, {"profile": "desk", "out": None, "seed": None,
                              "log_every": 25})
    if not cfg["out"]:
        raise DataError("pretrain needs --out")
    run_config = {"command": "pretrain", "profile": cfg["profile"],
                  "seed": cfg["seed"]}
    path = run_curriculum(cfg["profile"], cfg["seed"], cfg["out"],
                          log_every=int(cfg["log_every"]),
                          run_config=run_config)
    print(f"checkpoint: {path}")
    return 0


def _memory_plan(budget_mb, n, m, members, model_path=None):
    mem = MemoryModel.from_json(model_path) if model_path else MemoryModel()
    plan = {"col": plan_batch("col", n, budget_mb, mem),
            "row": plan_batch("row", m, budget_mb, mem),
            "icl": plan_batch("icl", n, budget_mb, mem)}
    plan["members_per_pass"] = min(int(members), plan["icl"])
    return plan


def cmd_predict(args):
    cfg = merge_config(args, {"input": None, "checkpoint": None, "target": None,
                              "out": None, "seed": None, "ensemble": 32,
                              "workers": 1, "budget_mb": None,
                              "memory_model": None})
    for key in ("input", "checkpoint", "target"):
        if not cfg[key]:
            raise DataError(f"predict needs --{key.replace('_', '-')}")
    out = cfg["out"]
    if not out:
        base, _ = os.path.splitext(cfg["input"])
        out = base + ".pred.csv"
    model, _ = load_checkpoint(cfg["checkpoint"])
    run_config = {"command": "predict", "seed": cfg["seed"],
                  "ensemble": int(cfg["ensemble"]), "target": cfg["target"],
                  "workers": int(cfg["workers"]),
                  "checkpoint": cfg["checkpoint"]}
    if cfg["budget_mb"] is not None:
        table = read_table_csv(cfg["input"], cfg["target"])
        plan = _memory_plan(float(cfg["budget_mb"]), table.X.shape[0],
                            table.X.shape[1], int(cfg["ensemble"]),
                            cfg["memory_model"])
        run_config["budget_mb"] = float(cfg["budget_mb"])
        run_config["memory_plan"] = plan
        print(f"memory plan for {cfg['budget_mb']} MB: {json.dumps(plan)}",
              file=sys.stderr)
    econf = EnsembleConfig(members=int(cfg["ensemble"]), seed=cfg["seed"])
    row_ids, pred, _ = predict_file(cfg["input"], model, cfg["target"],
                                    out_path=out, config=econf,
                                    workers=int(cfg["workers"]),
                                    run_config=run_config)
    print(f"wrote {len(row_ids)} predictions to {out}")
    return 0


def cmd_eval(args):
    cfg = merge_config(args, {"input": None, "checkpoint": None, "target": None,
                              "out": None, "seed": None, "ensemble": 32,
                              "workers": 1, "split": 0.7})
    for key in ("input", "checkpoint", "target"):
        if not cfg[key]:
            raise DataError(f"eval needs --{key.replace('_', '-')}")
    table = read_table_csv(cfg["input"], cfg["target"])
    if table.test_idx.size:
        raise DataError("eval expects a fully labeled table; "
                        f"row {int(table.test_idx[0])} has an empty target")
    labels = [t for t in table.target_raw]
    classes = sorted(set(labels))
    try:
        classes = sorted(classes, key=lambda v: (float(v), v))
    except ValueError:
        pass
    code = {c: i for i, c in enumerate(classes)}
    y = np.array([code[t] for t in labels], dtype=np.int64)
    n = len(y)
    n_train = int(round(float(cfg["split"]) * n))
    if n_train < 1 or n_train >= n:
        raise DataError(f"--split {cfg['split']} leaves no train or no test rows")
    if len(set(y[:n_train])) < len(classes):
        raise DataError("every class must appear in the first "
                        f"{n_train} rows (train split)")
    model, _ = load_checkpoint(cfg["checkpoint"])
    econf = EnsembleConfig(members=int(cfg["ensemble"]), seed=cfg["seed"])
    P = ensemble_predict(model, table.X, y[:n_train], n_train, len(classes),
                         config=econf, workers=int(cfg["workers"]))
    y_test = y[n_train:]
    metrics = {
        "accuracy": accuracy(y_test, P),
        "auc_ovr": auc_ovr_macro(y_test, P),
        "log_loss": log_loss(y_test, P),
        "n_train": n_train,
        "n_test": int(n - n_train),
        "C": len(classes),
        "run_config": {"command": "eval", "seed": cfg["seed"],
                       "ensemble": int(cfg["ensemble"]),
                       "split": float(cfg["split"]), "target": cfg["target"],
                       "checkpoint": cfg["checkpoint"]},
    }
    text = json.dumps(metrics, indent=2)
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def parse_sizes(spec):
    """'256x4,512x8' -> [(256, 4), (512, 8)]."""
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            n_s, m_s = part.lower().split("x")
            out.append((int(n_s), int(m_s)))
        except ValueError:
            raise DataError(f"bad size {part!r}; use NxM, e.g. 512x8")
    return out


def cmd_bench_time(args):
    cfg = merge_config(args, {"checkpoint": None, "out": None, "seed": None,
                              "sizes": "256x4,512x4,1024x4,256x8,512x8,1024x8",
                              "workers": 1, "repeats": 3})
    if not cfg["checkpoint"] or not cfg["out"]:
        raise DataError("bench-time needs --checkpoint and --out")
    sizes = parse_sizes(cfg["sizes"])
    if len(sizes) < 4:
        raise DataError(f"need at least 4 size points, got {len(sizes)}")
    model, _ = load_checkpoint(cfg["checkpoint"])
    run_config = {"command": "bench-time", "seed": cfg["seed"],
                  "sizes": cfg["sizes"], "repeats": int(cfg["repeats"]),
                  "checkpoint": cfg["checkpoint"]}
    records = []
    for n, m in sizes:
        secs = time_forward(model, n, m, seed=cfg["seed"],
                            repeats=int(cfg["repeats"]),
                            workers=int(cfg["workers"]))
        records.append((n, m, runtime_x(n, m), secs))
        print(f"n={n} m={m}: {secs:.4f} s", file=sys.stderr)
    xs = np.array([r[2] for r in records])
    ts = np.array([r[3] for r in records])
    alpha, beta, msle = fit_runtime_scaling(xs, ts)
    residuals = list(np.log(ts) - np.log(alpha + beta * xs ** RUNTIME_GAMMA))
    with open(cfg["out"], "w", newline="") as fh:
        fh.write(f"# run_config: {json.dumps(run_config)}\n")
        writer = csv.writer(fh)
        writer.writerow(["n", "m", "x", "seconds"])
        for n, m, x, secs in records:
            writer.writerow([n, m, repr(x), repr(secs)])
    fit_path = os.path.splitext(cfg["out"])[0] + "_fit.json"
    with open(fit_path, "w") as fh:
        json.dump({"alpha": alpha, "beta": beta, "gamma": RUNTIME_GAMMA,
                   "msle": msle, "residuals": [float(r) for r in residuals],
                   "run_config": run_config}, fh, indent=2)
    print(f"alpha={alpha:.6g} beta={beta:.6g} msle={msle:.6g}")
    print(f"wrote {cfg['out']} and {fit_path}")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="tabicl")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None,
                       help="JSON file with flag defaults; flags win")

    p = sub.add_parser("gen-priors", help="sample synthetic datasets")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--scatter", type=int, default=None,
                   help="write 2-D scatter CSVs for the first K datasets")
    p.set_defaults(func=cmd_gen_priors)

    p = sub.add_parser("pretrain", help="run the training curriculum")
    common(p)
    p.add_argument("--profile", choices=["desk", "paper"], default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--log-every", dest="log_every", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("predict", help="predict unlabeled rows of a CSV")
    common(p)
    p.add_argument("--input", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--target", default=None, help="label column name")
    p.add_argument("--out", default=None)
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--budget-mb", dest="budget_mb", type=float, default=None)
    p.add_argument("--memory-model", dest="memory_model", default=None,
                   help="JSON sidecar with memory coefficients")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metrics on a fully labeled CSV")
    common(p)
    p.add_argument("--input", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--split", type=float, default=None,
                   help="train fraction; first rows are the context")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-time", help="forward-pass timings + scaling fit")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None, help="timing CSV path")
    p.add_argument("--sizes", default=None, help="comma list of NxM")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.set_defaults(func=cmd_bench_time)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
