"""Tensor core: forward semantics, reverse-mode gradients, masking, dtypes."""

import numpy as np
import pytest

import tabicl.tensor_core as tc
from tabicl.tensor_core import AttentionMask, NumericError, Tensor, grad_check


def randn(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_default_dtype_is_float32():
    t = Tensor(np.arange(3.0))
    assert t.data.dtype == np.float32


def test_precision_context_switches_dtype():
    with tc.precision("float64"):
        t = Tensor(np.arange(3.0))
        assert t.data.dtype == np.float64
    t2 = Tensor(np.arange(3.0))
    assert t2.data.dtype == np.float32


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(4), requires_grad=True)
    with tc.no_grad():
        y = tc.tsum(tc.mul(x, x))
    assert y.requires_grad is False
    assert y._parents == ()


def test_non_finite_raises():
    x = Tensor(np.array([1.0, np.inf]))
    with pytest.raises(NumericError):
        tc.exp(x)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_finite_checks_can_be_disabled():
    x = Tensor(np.array([1000.0], dtype=np.float32))
    with tc.finite_checks(False):
        y = tc.exp(x)
    assert np.isinf(y.data).all()


def test_matmul_shapes_and_values():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.arange(12.0).reshape(3, 4))
    out = tc.matmul(a, b)
    np.testing.assert_allclose(out.data, a.data @ b.data)


def test_getitem_gather_backward_accumulates_duplicates():
    with tc.precision("float64"):
        x = Tensor(np.arange(4.0), requires_grad=True)
        picked = x[np.array([1, 1, 3])]
        tc.tsum(picked).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 2.0, 0.0, 1.0])


def test_softmax_masked_entries_are_exactly_zero():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    bias = np.array([0.0, 0.0, AttentionMask.NEG], dtype=np.float32)
    p = tc.softmax(tc.add(x, Tensor(bias)), axis=-1)
    assert p.data[0, 2] == 0.0
    np.testing.assert_allclose(p.data.sum(), 1.0, atol=1e-6)


def test_attention_mask_prefix_pattern():
    mask = AttentionMask.keys_restricted_to(3)
    bias = mask.bias(2, 5, np.float32)
    assert bias.shape == (2, 5)
    assert (bias[:, :3] == 0).all()
    assert (bias[:, 3:] == AttentionMask.NEG).all()


def test_attention_mask_full_is_no_bias():
    assert AttentionMask.full().bias(3, 3, np.float32) is None


def test_cross_entropy_uniform_two_classes():
    logits = Tensor(np.zeros((4, 2)))
    loss = tc.cross_entropy(logits, np.array([0, 1, 0, 1]))
    np.testing.assert_allclose(loss.data, np.log(2.0), rtol=1e-6)


def test_cross_entropy_ignores_inactive_classes():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((5, 10))
    lab = np.array([0, 1, 2, 1, 0])
    a = tc.cross_entropy(Tensor(raw), lab, n_classes=3)
    # amplifying the inactive logits must not change the loss
    raw2 = raw.copy()
    raw2[:, 3:] += 50.0
    b = tc.cross_entropy(Tensor(raw2), lab, n_classes=3)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-5)


def test_broadcast_add_backward():
    with tc.precision("float64"):
        rng = np.random.default_rng(1)
        x = randn(rng, 3, 4)
        b = randn(rng, 4)
        err = grad_check(lambda x, b: tc.tsum(tc.mul(tc.add(x, b), tc.add(x, b))), [x, b])
        assert err < 1e-6


@pytest.mark.parametrize("op", ["exp", "log", "gelu", "softmax", "log_softmax",
                                "tsum", "tmean", "reshape", "transpose", "concat"])
def test_primitive_gradients(op):
    rng = np.random.default_rng(hash(op) % 2**31)
    with tc.precision("float64"):
        x = randn(rng, 2, 3)
        coef = Tensor(rng.standard_normal((2, 3)))
        if op == "exp":
            fn = lambda x: tc.tsum(tc.exp(x) * coef)
        elif op == "log":
            fn = lambda x: tc.tsum(tc.log(tc.add(tc.mul(x, x), 1.0)) * coef)
        elif op == "gelu":
            fn = lambda x: tc.tsum(tc.gelu(x) * coef)
        elif op == "softmax":
            fn = lambda x: tc.tsum(tc.softmax(x, axis=-1) * coef)
        elif op == "log_softmax":
            fn = lambda x: tc.tsum(tc.log_softmax(x, axis=-1) * coef)
        elif op == "tsum":
            c = Tensor(rng.standard_normal(3))
            fn = lambda x: tc.tsum(tc.tsum(x, axis=0) * c)
        elif op == "tmean":
            c = Tensor(rng.standard_normal(2))
            fn = lambda x: tc.tsum(tc.tmean(x, axis=1) * c)
        elif op == "reshape":
            c = Tensor(rng.standard_normal((3, 2)))
            fn = lambda x: tc.tsum(tc.reshape(x, (3, 2)) * c)
        elif op == "transpose":
            c = Tensor(rng.standard_normal((3, 2)))
            fn = lambda x: tc.tsum(tc.transpose(x, (1, 0)) * c)
        else:
            c = Tensor(rng.standard_normal((4, 3)))
            fn = lambda x: tc.tsum(tc.concat([x, x], axis=0) * c)
        assert grad_check(fn, [x]) < 1e-6


def test_layer_norm_gradient_and_stats():
    rng = np.random.default_rng(7)
    with tc.precision("float64"):
        ln = tc.LayerNorm(5)
        x = randn(rng, 4, 5)
        out = ln(x)
        np.testing.assert_allclose(out.data.mean(-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.data.std(-1), 1.0, atol=1e-3)
        err = grad_check(lambda x, g, s: tc.tsum(ln(x) * ln(x)), [x, ln.gain, ln.shift])
        assert err < 1e-6


def test_linear_layer_matches_manual_affine():
    rng = np.random.default_rng(3)
    lin = tc.LinearLayer(4, 2, rng)
    x = Tensor(rng.standard_normal((5, 4)).astype(np.float32))
    out = lin(x)
    ref = x.data @ lin.weight.data.T + lin.bias.data
    np.testing.assert_allclose(out.data, ref, rtol=1e-6)


def test_linear_init_range():
    rng = np.random.default_rng(4)
    lin = tc.LinearLayer(16, 8, rng)
    bound = 1.0 / np.sqrt(16)
    assert np.abs(lin.weight.data).max() <= bound
    assert (lin.bias.data == 0).all()


def test_mha_masked_gradient():
    rng = np.random.default_rng(5)
    with tc.precision("float64"):
        mha = tc.MultiHeadAttention(8, 2, rng)
        q = randn(rng, 5, 8)
        kv = randn(rng, 6, 8)
        coef = Tensor(rng.standard_normal((5, 8)))
        mask = AttentionMask.keys_restricted_to(4)
        err = grad_check(lambda *a: tc.tsum(mha(q, kv, kv, mask=mask) * coef),
                         [q, kv] + list(mha.named_parameters().values()))
        assert err < 1e-4


def test_mha_mask_blocks_information():
    rng = np.random.default_rng(6)
    mha = tc.MultiHeadAttention(8, 2, rng)
    kv = Tensor(rng.standard_normal((6, 8)).astype(np.float32))
    q = Tensor(rng.standard_normal((3, 8)).astype(np.float32))
    mask = AttentionMask.keys_restricted_to(4)
    with tc.no_grad():
        base = mha(q, kv, kv, mask=mask).data.copy()
        kv2 = kv.data.copy()
        kv2[4:] += 10.0
        moved = mha(q, Tensor(kv2), Tensor(kv2), mask=mask).data
    np.testing.assert_array_equal(base, moved)


def test_module_named_parameters_nested():
    rng = np.random.default_rng(8)
    ff = tc.FeedForward(4, rng)
    names = set(ff.named_parameters())
    assert {"lin1.weight", "lin1.bias", "lin2.weight", "lin2.bias"} <= names


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = tc.mul(x, 2.0)
    with pytest.raises(ValueError):
        y.backward()


def test_rope_rotate_preserves_norm():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((7, 8)).astype(np.float32))
    ang = rng.uniform(0, 2 * np.pi, size=(7, 4))
    out = tc.rope_rotate(x, np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32))
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1),
                               np.linalg.norm(x.data, axis=-1), rtol=1e-5)


def test_grad_check_example_from_docs():
    with tc.precision("float64"):
        x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
        err = grad_check(lambda x: tc.tsum(tc.mul(x, x)), [x])
        assert err < 1e-8
