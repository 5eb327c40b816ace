"""Minimal dense-tensor core with reverse-mode differentiation.

Everything is a numpy array wrapped in a :class:`Tensor` that remembers how it
was produced.  Calling ``backward()`` on a scalar walks the graph in reverse
topological order and accumulates gradients into every leaf that asked for
them.  Only the primitives needed by the three transformers are implemented;
there is no lazy evaluation, no views, no in-place surgery.

Default precision is float32.  Gradient checking and a few acceptance tests
run under ``precision(np.float64)``.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np


class NumericError(RuntimeError):
    """A non-finite value appeared where finiteness is guaranteed."""


class MaskError(ValueError):
    """An attention mask excludes every key for some query."""


# --- global switches -------------------------------------------------------

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_FINITE_CHECKS = True


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new parameters and constants."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference mode)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def finite_checks(enabled: bool):
    global _FINITE_CHECKS
    old = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = old


def _check_finite(data, what="op output"):
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {what}")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the recipe that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(_DEFAULT_DTYPE)
        elif arr.dtype == np.float64 and _DEFAULT_DTYPE is np.float32:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = ()
        self._backward = None
        self.name = name

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def detach(self):
        """A leaf tensor sharing this one's values, cut from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out.name = None
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    topo.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, grad):
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = grad
        else:
            self.grad = self.grad + grad

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division not supported; use mul + reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents, backward_fn, what):
    _check_finite(data, what)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# --- primitives ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _result(data, (a, b), backward, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _result(data, (a, b), backward, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _result(data, (a, b), backward, "matmul")


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accum(g.reshape(a.data.shape))

    return _result(data, (a,), backward, "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inv))

    return _result(data, (a,), backward, "transpose")


def swap_last2(a):
    a = as_tensor(a)
    return transpose(a, tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2))


def getitem(a, idx):
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)

    return _result(data, (a,), backward, "getitem")


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accum(g[tuple(sl)])

    return _result(data, tuple(parts), backward, "concat")


def broadcast_to(a, shape):
    a = as_tensor(a)
    data = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        a._accum(_unbroadcast(g, a.data.shape))

    return _result(data, (a,), backward, "broadcast_to")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape))

    return _result(np.asarray(data), (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        a._accum(g * data)

    return _result(data, (a,), backward, "exp")


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        a._accum(g / a.data)

    return _result(data, (a,), backward, "log")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Gaussian error linear unit (tanh form)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a._accum(g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

    return _result(data, (a,), backward, "gelu")


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis`.

    Entries at -1e30 (the mask sentinel) underflow to exactly zero weight.
    """
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accum((g - dot) * data)

    return _result(data, (a,), backward, "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        a._accum(g - soft * g.sum(axis=axis, keepdims=True))

    return _result(data, (a,), backward, "log_softmax")


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalize over the last axis with learned gain and shift.

    Uses the biased variance, matching the conventional transformer layout.
    """
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + shift.data

    def backward(g):
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.data.shape))
        if shift.requires_grad:
            shift._accum(_unbroadcast(g, shift.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            s1 = gx.sum(axis=-1, keepdims=True)
            s2 = (gx * xhat).sum(axis=-1, keepdims=True)
            x._accum(inv * (gx - s1 / d - xhat * s2 / d))

    return _result(data, (x, gain, shift), backward, "layer_norm")


def rope_rotate(x, cos, sin):
    """Rotate adjacent coordinate pairs of `x` by per-position angles.

    `x` has shape (..., n, d) with d even; `cos`/`sin` have shape (n, d/2)
    and are plain arrays (position tables carry no gradient).  Pair (2i,
    2i+1) is rotated by the angle whose cosine/sine sit at column i.
    """
    x = as_tensor(x)
    d = x.data.shape[-1]
    if d % 2:
        raise ValueError("rope_rotate needs an even trailing dimension")
    x1 = x.data[..., 0::2]
    x2 = x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos

    def backward(g):
        g1 = g[..., 0::2]
        g2 = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = g1 * cos + g2 * sin
        gx[..., 1::2] = -g1 * sin + g2 * cos
        x._accum(gx)

    return _result(out, (x,), backward, "rope_rotate")


# --- modules ---------------------------------------------------------------

class Module:
    """Tiny parameter container with named-parameter traversal."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix=""):
        out = {}
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, child in self._children.items():
            out.update(child.named_parameters(prefix + k + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None


class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        self.mods = list(mods)
        for i, m in enumerate(self.mods):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self.mods)

    def __len__(self):
        return len(self.mods)

    def __getitem__(self, i):
        return self.mods[i]


def uniform_init(rng, shape, fan_in, dtype=None):
    bound = 1.0 / math.sqrt(fan_in)
    dtype = dtype or _DEFAULT_DTYPE
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class LinearLayer(Module):
    """Affine map y = x W^T + b with U[-1/sqrt(fan_in), 1/sqrt(fan_in)] weights."""

    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.weight = Tensor(uniform_init(rng, (n_out, n_in), n_in), requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(n_out, dtype=_DEFAULT_DTYPE), requires_grad=True)
        else:
            self.bias = None

    def __call__(self, x):
        out = matmul(x, transpose(self.weight, (1, 0)))
        if self.bias is not None:
            out = add(out, self.bias)
        return out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Tensor(np.ones(dim, dtype=_DEFAULT_DTYPE), requires_grad=True)
        self.shift = Tensor(np.zeros(dim, dtype=_DEFAULT_DTYPE), requires_grad=True)

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift, self.eps)


class FeedForward(Module):
    """Two-layer GELU MLP; hidden width defaults to twice the model width."""

    def __init__(self, dim, rng, hidden=None):
        super().__init__()
        hidden = hidden or 2 * dim
        self.lin1 = LinearLayer(dim, hidden, rng)
        self.lin2 = LinearLayer(hidden, dim, rng)

    def __call__(self, x):
        return self.lin2(gelu(self.lin1(x)))


class AttentionMask:
    """Which keys each query may attend to.

    Either a named pattern (`full`, or `keys_restricted_to(prefix_len)` which
    lets every query see only the first `prefix_len` keys) or an explicit
    boolean matrix of shape (n_q, n_k).  Converted to an additive bias of 0
    (permitted) or -1e30 (forbidden); after the stable softmax forbidden keys
    get exactly zero weight.
    """

    NEG = -1e30

    def __init__(self, kind, prefix_len=None, matrix=None):
        self.kind = kind
        self.prefix_len = prefix_len
        self.matrix = matrix

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def keys_restricted_to(cls, prefix_len):
        if prefix_len < 1:
            raise MaskError("prefix_len must be >= 1")
        return cls("prefix", prefix_len=prefix_len)

    @classmethod
    def dense(cls, matrix):
        matrix = np.asarray(matrix, dtype=bool)
        if matrix.ndim != 2:
            raise MaskError("dense mask must be 2-D")
        if not matrix.any(axis=1).all():
            raise MaskError("mask excludes all keys for some query")
        return cls("dense", matrix=matrix)

    def bias(self, n_q, n_k, dtype):
        if self.kind == "full":
            return None
        if self.kind == "prefix":
            if self.prefix_len > n_k:
                raise MaskError(f"prefix_len {self.prefix_len} exceeds n_k {n_k}")
            b = np.zeros((n_q, n_k), dtype=dtype)
            b[:, self.prefix_len:] = self.NEG
            return b
        if self.matrix.shape != (n_q, n_k):
            raise MaskError(f"dense mask shape {self.matrix.shape} != ({n_q}, {n_k})")
        b = np.where(self.matrix, 0.0, self.NEG).astype(dtype)
        return b


class MultiHeadAttention(Module):
    """Standard multi-head scaled dot-product attention with projections.

    Supports an optional AttentionMask and optional rotary position tables
    (cos, sin) applied to queries and keys of every head.
    """

    def __init__(self, dim, heads, rng):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = LinearLayer(dim, dim, rng)
        self.wk = LinearLayer(dim, dim, rng)
        self.wv = LinearLayer(dim, dim, rng)
        self.wo = LinearLayer(dim, dim, rng)

    def _split(self, t, n):
        # (..., n, dim) -> (..., heads, n, head_dim)
        lead = t.shape[:-2]
        t = reshape(t, lead + (n, self.heads, self.head_dim))
        perm = tuple(range(len(lead))) + (t.ndim - 2, t.ndim - 3, t.ndim - 1)
        return transpose(t, perm)

    def __call__(self, q, k, v, mask=None, rope=None):
        n_q, n_k = q.shape[-2], k.shape[-2]
        qh = self._split(self.wq(q), n_q)
        kh = self._split(self.wk(k), n_k)
        vh = self._split(self.wv(v), n_k)
        if rope is not None:
            cos, sin = rope
            qh = rope_rotate(qh, cos[:n_q], sin[:n_q])
            kh = rope_rotate(kh, cos[:n_k], sin[:n_k])
        scores = mul(matmul(qh, swap_last2(kh)), 1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            bias = mask.bias(n_q, n_k, scores.dtype.type)
            if bias is not None:
                scores = add(scores, Tensor(bias))
        attn = softmax(scores, axis=-1)
        out = matmul(attn, vh)
        lead = out.shape[:-3]
        perm = tuple(range(len(lead))) + (out.ndim - 2, out.ndim - 3, out.ndim - 1)
        out = transpose(out, perm)
        out = reshape(out, lead + (n_q, self.dim))
        return self.wo(out)


# --- losses ----------------------------------------------------------------

def cross_entropy(logits, labels, n_classes=None):
    """Mean negative log-likelihood of integer `labels` under `logits`.

    If `n_classes` is given, only the first `n_classes` logits compete in
    the softmax; the rest are masked out.
    """
    labels = np.asarray(labels)
    n = logits.shape[0]
    if n_classes is not None and n_classes < logits.shape[-1]:
        bias = np.zeros(logits.shape[-1], dtype=logits.dtype.type)
        bias[n_classes:] = AttentionMask.NEG
        logits = add(logits, Tensor(bias))
    logp = log_softmax(logits, axis=-1)
    picked = getitem(logp, (np.arange(n), labels))
    return mul(tsum(picked), -1.0 / n)


# --- gradient checking -----------------------------------------------------

def grad_check(fn, tensors, step=1e-5):
    """Compare reverse-mode gradients of scalar `fn(*tensors)` to central
    finite differences.

    Returns the max over all elements of |g - g_fd| / max(1, |g|, |g_fd|).
    Run under ``precision(np.float64)`` with float64 tensors; float32 cannot
    resolve the 1e-4 tolerance.
    """
    for t in tensors:
        t.grad = None
    out = fn(*tensors)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite output in grad_check forward pass")
    out.backward()
    worst = 0.0
    for t in tensors:
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        gfd = np.zeros_like(t.data)
        with no_grad():
            for idx in np.ndindex(t.data.shape):
                orig = t.data[idx]
                t.data[idx] = orig + step
                hi = float(fn(*tensors).data)
                t.data[idx] = orig - step
                lo = float(fn(*tensors).data)
                t.data[idx] = orig
                gfd[idx] = (hi - lo) / (2 * step)
        denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(gfd)))
        err = np.abs(g - gfd) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
