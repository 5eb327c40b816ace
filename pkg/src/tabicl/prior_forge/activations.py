"""Activation zoo for the MLP-graph prior.

Each layer standardizes its pre-activations per feature, rescales them with
x <- exp(2a)(x + b) using scalar a, b ~ N(0,1) drawn per layer, then applies
the sampled nonlinearity.  The random-Fourier activation skips the rescale
and acts on the standardized values directly; it is sampled ten times more
often than any other kind.
"""

from __future__ import annotations

import numpy as np

_SIMPLE_KINDS = (
    "identity", "tanh", "leaky_relu", "elu", "relu", "relu6", "selu", "silu",
    "softplus", "hardtanh", "sign", "sine", "rbf", "exp", "sqrt_abs",
    "indicator_unit_interval", "square", "abs",
)
ACTIVATION_KINDS = _SIMPLE_KINDS + ("random_fourier",)

_RF_WEIGHT = 10.0
_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805
# keep exp()'s output squarable in float64
_EXP_CLIP = 100.0


def sample_activation_kind(rng):
    w = np.ones(len(ACTIVATION_KINDS))
    w[-1] = _RF_WEIGHT
    return str(rng.choice(ACTIVATION_KINDS, p=w / w.sum()))


def standardize(x):
    """Per-column (x - mean) / std with the biased std; dead columns go to 0."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (x - mu) / sd


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply_simple(x, kind):
    if kind == "identity":
        return x
    if kind == "tanh":
        return np.tanh(x)
    if kind == "leaky_relu":
        return np.where(x > 0, x, 0.01 * x)
    if kind == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "relu6":
        return np.clip(x, 0.0, 6.0)
    if kind == "selu":
        return _SELU_SCALE * np.where(
            x > 0, x, _SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "silu":
        return x * _sigmoid(x)
    if kind == "softplus":
        return np.logaddexp(0.0, x)
    if kind == "hardtanh":
        return np.clip(x, -1.0, 1.0)
    if kind == "sign":
        return np.sign(x)
    if kind == "sine":
        return np.sin(x)
    if kind == "rbf":
        return np.exp(-x * x)
    if kind == "exp":
        return np.exp(np.minimum(x, _EXP_CLIP))
    if kind == "sqrt_abs":
        return np.sqrt(np.abs(x))
    if kind == "indicator_unit_interval":
        return ((x >= 0.0) & (x <= 1.0)).astype(np.float64)
    if kind == "square":
        return x * x
    if kind == "abs":
        return np.abs(x)
    raise ValueError(f"unknown activation kind {kind!r}")


class RandomFourierActivation:
    """f(x) = (w/||w||_2 * sin(a x + b))^T z with N=256 sampled components.

    w_i = a_i^(-exp(u)); the power is evaluated in log space because the
    exponent reaches -e^3 and tiny a_i would overflow a direct pow.
    """

    N = 256

    def __init__(self, rng):
        self.b = rng.uniform(0.0, 2.0 * np.pi, size=self.N)
        self.a = rng.uniform(0.0, float(self.N), size=self.N)
        self.u = float(rng.uniform(0.7, 3.0))
        self.z = rng.standard_normal(self.N)
        logw = -np.exp(self.u) * np.log(np.maximum(self.a, 1e-300))
        w = np.exp(logw - logw.max())
        self.coef = (w / np.linalg.norm(w)) * self.z

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x[None, :]
        out = np.empty_like(flat)
        for j in range(flat.shape[1]):
            out[:, j] = np.sin(np.outer(flat[:, j], self.a) + self.b) @ self.coef
        return out.reshape(x.shape)


def activation_layer(x, kind, rng):
    """standardize -> rescale with exp(2a)(x+b) -> nonlinearity, per layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("activation_layer needs a batch of at least 2")
    z = standardize(x)
    if kind == "random_fourier":
        return RandomFourierActivation(rng)(z)
    a = float(rng.standard_normal())
    b = float(rng.standard_normal())
    z = np.exp(2.0 * a) * (z + b)
    return _apply_simple(z, kind)
