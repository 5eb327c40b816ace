"""Dataset container, label discretization, and the TICL binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed dataset, file, or configuration."""


class DegenerateTargetError(DataError):
    """Target column cannot be split into the requested classes."""


class PriorSamplingError(DataError):
    """Resampling budget exhausted while generating a dataset."""


@dataclass
class PriorConfig:
    """Knobs of the synthetic prior at desk scale."""

    n_samples: tuple = (128, 512)
    n_features: tuple = (2, 8)
    n_classes: tuple = (2, 10)
    scm_fraction: float = 0.7
    # SCM graph shape
    layers: tuple = (2, 5)
    width: tuple = (4, 16)
    noise_dim: tuple = (2, 8)
    sigma_log_range: tuple = (np.log(0.01), np.log(0.3))

    def validate(self):
        if not 0.0 <= self.scm_fraction <= 1.0:
            raise DataError("scm_fraction must lie in [0, 1]")
        if self.n_features[1] > 100:
            raise DataError("n_features capped at 100")
        if not (2 <= self.n_classes[0] <= self.n_classes[1] <= 10):
            raise DataError("n_classes must lie in [2, 10]")
        for name in ("n_samples", "n_features", "n_classes", "layers", "width",
                     "noise_dim"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise DataError(f"bad range for {name}: ({lo}, {hi})")

    def to_dict(self):
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in vars(self).items()}
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs)


@dataclass
class SyntheticDataset:
    X: np.ndarray
    y: np.ndarray
    C: int
    kind: str = "scm"
    seed: int | None = None
    tree_layer_stats: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]


def validate_dataset(ds: SyntheticDataset):
    """Raise DataError unless `ds` satisfies every container invariant."""
    X, y = np.asarray(ds.X), np.asarray(ds.y)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError("X must be n x m with matching n labels")
    if X.shape[1] > 100:
        raise DataError("more than 100 features")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    if not 2 <= ds.C <= 10:
        raise DataError(f"C={ds.C} outside [2, 10]")
    if y.min() < 0 or y.max() >= ds.C:
        raise DataError("labels outside [0, C)")
    counts = np.bincount(y, minlength=ds.C)
    if counts.min() < 2:
        raise DataError("some class has fewer than 2 samples")
    return True


def discretize_target(t, C, rng, max_tries=10):
    """Bin a continuous target into C labels via random quantile cuts.

    Cut levels are C-1 sorted uniforms affinely squeezed so that neighbours
    (and the ends 0 and 1) stay at least 1/(2C) apart, which guarantees
    every class at least that quantile mass.  A draw that still leaves a
    class with fewer than two members (possible when t has few distinct
    values) is thrown away, up to `max_tries` times.
    """
    t = np.asarray(t, dtype=np.float64)
    n = t.shape[0]
    if n < 2 * C:
        raise DataError(f"need n >= 2C (got n={n}, C={C})")
    if np.ptp(t) < 1e-12:
        raise DegenerateTargetError("constant target column")
    gap = 1.0 / (2 * C)
    scale = 1.0 - C * gap
    for _ in range(max_tries):
        u = np.sort(rng.uniform(0.0, 1.0, size=C - 1))
        levels = gap * np.arange(1, C) + scale * u
        cuts = np.quantile(t, levels)
        y = np.searchsorted(cuts, t, side="left")
        if np.bincount(y, minlength=C).min() >= 2:
            return y.astype(np.int64)
    raise DegenerateTargetError("could not find cuts giving >= 2 samples per class")


# --- TICL binary format ----------------------------------------------------

TICL_MAGIC = b"TICL"
TICL_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


def save_ticl(ds: SyntheticDataset, path):
    X = np.ascontiguousarray(np.asarray(ds.X, dtype="<f4"))
    y = np.ascontiguousarray(np.asarray(ds.y, dtype="<u4"))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TICL_MAGIC, TICL_VERSION, X.shape[0], X.shape[1], ds.C))
        fh.write(X.tobytes())
        fh.write(y.tobytes())


def load_ticl(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, n, m, c = _HEADER.unpack(head)
        if magic != TICL_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != TICL_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        body = fh.read(4 * n * m + 4 * n)
        if len(body) != 4 * n * m + 4 * n:
            raise DataError(f"{path}: truncated body")
    X = np.frombuffer(body[:4 * n * m], dtype="<f4").reshape(n, m)
    y = np.frombuffer(body[4 * n * m:], dtype="<u4").astype(np.int64)
    if y.size and y.max() >= c:
        raise DataError(f"{path}: label {int(y.max())} out of range for C={c}")
    return SyntheticDataset(X=X.copy(), y=y, C=int(c), kind="file")


def export_scatter_csv(ds: SyntheticDataset, path):
    """Dump the first two features and the label for quick 2-D inspection."""
    if ds.m < 2:
        raise DataError("scatter export needs at least 2 features")
    with open(path, "w") as fh:
        fh.write("x0,x1,label\n")
        for i in range(ds.n):
            fh.write(f"{ds.X[i, 0]!r},{ds.X[i, 1]!r},{int(ds.y[i])}\n")
