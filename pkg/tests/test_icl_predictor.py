"""ICL predictor tests: label fusion, masked in-context attention, the
assembled model, and canonical label codes."""

import numpy as np
import pytest

import tabicl.tensor_core as tc
from tabicl.icl_predictor import (IclConfig, IclPredictor, LabelFuser,
                                  ModelConfig, TabICLModel, canonical_codes,
                                  fuse_labels, one_hot, predict_dataset)
from tabicl.tensor_core import Tensor


def tiny_model_config():
    cfg = ModelConfig.desk()
    cfg.col.d = 8
    cfg.col.k_inducing = 2
    cfg.col.n_isab = 1
    cfg.col.heads = 2
    cfg.row.d = 8
    cfg.row.layers = 1
    cfg.row.heads = 2
    cfg.row.n_cls = 2
    cfg.icl.model_dim = 16
    cfg.icl.layers = 1
    cfg.icl.heads = 2
    cfg.icl.head_hidden = 16
    return cfg


# --------------------------------------------------------------- one-hot

def test_one_hot_width_and_values():
    oh = one_hot(np.array([0, 2, 1]), 5)
    assert oh.shape == (3, 5)
    np.testing.assert_array_equal(oh.sum(axis=1), 1.0)
    np.testing.assert_array_equal(np.argmax(oh, axis=1), [0, 2, 1])


# ------------------------------------------------------------ label fuser

@pytest.fixture
def fuser():
    return LabelFuser(c_max=10, model_dim=16, rng=np.random.default_rng(0))


def test_fuser_adds_projection_on_train_rows(fuser):
    rng = np.random.default_rng(1)
    H = Tensor(rng.standard_normal((7, 16)).astype(np.float32))
    y = np.array([0, 1, 2, 1])
    out = fuse_labels(H, y, 3, fuser).data
    manual = one_hot(y, 10, np.float32) @ fuser.proj.weight.data.T
    np.testing.assert_allclose(out[:4], H.data[:4] + manual, rtol=1e-6)


def test_fuser_leaves_test_rows_untouched(fuser):
    H = Tensor(np.random.default_rng(2).standard_normal((6, 16)).astype(np.float32))
    out = fuse_labels(H, np.array([0, 1]), 2, fuser).data
    np.testing.assert_array_equal(out[2:], H.data[2:])


def test_fuser_zero_projection_is_identity():
    fuser = LabelFuser(10, 16, np.random.default_rng(3))
    fuser.proj.weight.data[:] = 0.0
    H = Tensor(np.random.default_rng(4).standard_normal((5, 16)).astype(np.float32))
    out = fuse_labels(H, np.array([1, 0, 1]), 2, fuser).data
    np.testing.assert_array_equal(out, H.data)


def test_fuser_rejects_bad_inputs(fuser):
    H = Tensor(np.zeros((4, 16), dtype=np.float32))
    with pytest.raises(ValueError):
        fuse_labels(H, np.array([0, 1]), 1, fuser)
    with pytest.raises(ValueError):
        fuse_labels(H, np.array([0, 1]), 11, fuser)
    with pytest.raises(ValueError):
        fuse_labels(H, np.array([0, 5]), 3, fuser)


# -------------------------------------------------------------- predictor

@pytest.fixture
def predictor():
    cfg = IclConfig(model_dim=16, layers=2, heads=2, c_max=10, head_hidden=16)
    return IclPredictor(cfg, np.random.default_rng(5))


def test_probs_shape_and_simplex(predictor):
    h = Tensor(np.random.default_rng(6).standard_normal((9, 16)).astype(np.float32))
    P = predictor(h, n_train=6, C=4).data
    assert P.shape == (3, 4)
    assert (P >= 0).all()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-5)


def test_inactive_classes_get_zero_probability(predictor):
    h = Tensor(np.random.default_rng(7).standard_normal((8, 16)).astype(np.float32))
    full = predictor.logits(h, n_train=5).data
    assert full.shape == (3, 10)
    P = predictor(h, n_train=5, C=3).data
    assert P.shape == (3, 3)


def test_test_rows_do_not_interact(predictor):
    # each test row's prediction depends on the context and itself only
    rng = np.random.default_rng(8)
    h = rng.standard_normal((10, 16)).astype(np.float32)
    P1 = predictor(Tensor(h), n_train=6, C=3).data
    h2 = h.copy()
    h2[9] += 4.0
    P2 = predictor(Tensor(h2), n_train=6, C=3).data
    np.testing.assert_array_equal(P1[:3], P2[:3])
    assert np.abs(P1[3] - P2[3]).max() > 0


def test_single_test_row_matches_batch(predictor):
    rng = np.random.default_rng(9)
    h = rng.standard_normal((8, 16)).astype(np.float32)
    batch = predictor(Tensor(h), n_train=5, C=3).data
    solo = predictor(Tensor(h[:6]), n_train=5, C=3).data
    np.testing.assert_array_equal(batch[0], solo[0])


# -------------------------------------------------------- canonical codes

def test_canonical_codes_first_appearance():
    codes = canonical_codes(np.array([2, 0, 2, 1]), 3)
    # class 2 appears first -> code 0, class 0 -> 1, class 1 -> 2
    np.testing.assert_array_equal(codes, [1, 2, 0])


def test_canonical_codes_absent_classes_appended():
    codes = canonical_codes(np.array([3, 3, 1]), 5)
    # appearance order: 3, 1; absent 0, 2, 4 appended ascending
    np.testing.assert_array_equal(codes, [2, 1, 3, 0, 4])


def test_canonical_codes_identity_for_sorted_context():
    codes = canonical_codes(np.array([0, 1, 2, 2, 1]), 3)
    np.testing.assert_array_equal(codes, [0, 1, 2])


# ------------------------------------------------------------- full model

@pytest.fixture(scope="module")
def tiny_model():
    return TabICLModel(tiny_model_config(), seed=0)


def test_model_predict_shapes(tiny_model):
    rng = np.random.default_rng(10)
    X = rng.standard_normal((12, 3)).astype(np.float32)
    y = rng.integers(0, 3, size=8)
    y[:3] = [0, 1, 2]
    P = tiny_model.predict(X, y, n_train=8, C=3)
    assert P.shape == (4, 3)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-5)


def test_model_deterministic_from_seed():
    cfg = tiny_model_config()
    a = TabICLModel(cfg, seed=7)
    b = TabICLModel(tiny_model_config(), seed=7)
    for (na, pa), (nb, pb) in zip(sorted(a.named_parameters().items()),
                                  sorted(b.named_parameters().items())):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_model_seed_changes_weights():
    a = TabICLModel(tiny_model_config(), seed=0)
    b = TabICLModel(tiny_model_config(), seed=1)
    same = all(np.array_equal(pa.data, pb.data)
               for pa, pb in zip(a.parameters(), b.parameters()))
    assert not same


def test_class_shuffle_equivariance_exact(tiny_model):
    rng = np.random.default_rng(11)
    X = rng.standard_normal((14, 3)).astype(np.float32)
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0])
    P = tiny_model.predict(X, y, n_train=10, C=3)
    perm = np.array([2, 0, 1])
    P2 = tiny_model.predict(X, perm[y], n_train=10, C=3)
    np.testing.assert_array_equal(P2[:, perm], P)


def test_duplicate_test_row_gets_same_prediction(tiny_model):
    rng = np.random.default_rng(12)
    X = rng.standard_normal((10, 3)).astype(np.float32)
    X[9] = X[8]
    y = np.array([0, 1, 0, 1, 0, 1])
    P = tiny_model.predict(X, y, n_train=6, C=2)
    np.testing.assert_array_equal(P[2], P[3])


def test_predict_dataset_split(tiny_model):
    rng = np.random.default_rng(13)
    X = rng.standard_normal((10, 3)).astype(np.float32)
    y_train = np.array([0, 1, 0, 1, 1, 0, 1])
    P = predict_dataset(X, y_train, 0.7, tiny_model, 2)
    assert P.shape == (3, 2)
    direct = tiny_model.predict(X, y_train, 7, 2)
    np.testing.assert_array_equal(P, direct)


def test_embed_calls_counter(tiny_model):
    before = tiny_model.embed_calls
    X = np.random.default_rng(14).standard_normal((8, 2)).astype(np.float32)
    tiny_model.embed_rows(X, 5)
    assert tiny_model.embed_calls == before + 1


def test_desk_config_parameter_count():
    model = TabICLModel(ModelConfig.desk(), seed=0)
    total = sum(int(np.prod(p.shape)) for p in model.parameters())
    assert total == 313_002
