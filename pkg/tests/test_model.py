import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echoview.autodiff import ShapeError, Tensor, backward, default_graph, log_softmax
from echoview.losses import cross_entropy_view
from echoview.model import ConfigError, ModelConfig, build_model, classify, encode, project, set_frozen
from echoview.training import AdamState, adam_step

SMALL = ModelConfig(input_size=32, block_channels=(2, 2, 3, 3, 4), fc_hidden=6, projection_hidden=5, projection_dim=3)


def params_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.state_arrays().values(), b.state_arrays().values()))


def test_default_seed_determinism():
    a = build_model(ModelConfig(), seed=7)
    b = build_model(ModelConfig(), seed=7)
    c = build_model(ModelConfig(), seed=8)
    assert all(params_equal(x, y) for x, y in zip(a, b))
    assert not params_equal(a[0], c[0])


def test_feature_dims():
    assert ModelConfig(input_size=96, block_channels=(4, 8, 16, 32, 64)).feature_dim == 576
    assert ModelConfig().feature_dim == 4608


def test_default_encoder_output_shape():
    enc, _, _ = build_model(ModelConfig(), seed=0)
    assert encode(enc, np.zeros((1, 1, 192, 192), np.float32), "eval").shape == (1, 4608)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kernel_size": 4},
        {"input_size": 100},
        {"input_size": 16},
        {"block_channels": (1, 2, 3, 4)},
        {"block_channels": (1, 0, 3, 4, 5)},
        {"num_classes": 12},
        {"fc_hidden": 0},
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


@settings(max_examples=20)
@given(
    st.sampled_from([32, 64, 96]),
    st.lists(st.integers(1, 4), min_size=5, max_size=5),
)
def test_encoder_output_dim_property(size, channels):
    cfg = ModelConfig(input_size=size, block_channels=tuple(channels), fc_hidden=3, projection_hidden=3, projection_dim=2)
    enc, proj, cls = build_model(cfg, seed=1)
    z = encode(enc, np.random.default_rng(0).random((2, 1, size, size)), "train")
    assert z.shape == (2, channels[4] * (size // 32) ** 2)
    assert classify(cls, z).shape == (2, 13)
    assert project(proj, z).shape == (2, 2)


def test_zero_image_gives_zero_features():
    enc, _, _ = build_model(SMALL, seed=0)
    z = encode(enc, np.zeros((2, 1, 32, 32), np.float32), "eval")
    assert np.all(z.data == 0)


def test_identical_images_identical_rows_eval(rng):
    enc, _, _ = build_model(SMALL, seed=0)
    img = rng.random((1, 1, 32, 32)).astype(np.float32)
    z = encode(enc, np.concatenate([img, img]), "eval").data
    np.testing.assert_array_equal(z[0], z[1])


def test_wrong_spatial_size_rejected():
    enc, proj, cls = build_model(SMALL, seed=0)
    with pytest.raises(ShapeError):
        encode(enc, np.zeros((1, 1, 64, 64), np.float32))
    with pytest.raises(ShapeError):
        project(proj, Tensor(np.zeros((1, 5), np.float32)))
    with pytest.raises(ShapeError):
        classify(cls, Tensor(np.zeros((1, 5), np.float32)))


def test_projection_rows_unit_norm(rng):
    # a wide hidden layer so no row has every relu unit off
    _, proj, _ = build_model(ModelConfig(**{**SMALL.to_dict(), "projection_hidden": 64}), seed=2)
    f = Tensor(rng.standard_normal((6, SMALL.feature_dim)).astype(np.float32))
    out = project(proj, f).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)
    twin = project(proj, Tensor(f.data[[0, 0]])).data
    np.testing.assert_array_equal(twin[0], twin[1])


def test_zero_features_project_to_zero():
    _, proj, _ = build_model(SMALL, seed=2)
    out = project(proj, Tensor(np.zeros((2, SMALL.feature_dim), np.float32))).data
    assert np.all(np.isfinite(out)) and np.all(out == 0)


def test_projection_without_normalization(rng):
    cfg = ModelConfig(**{**SMALL.to_dict(), "normalize_projection": False})
    _, proj, _ = build_model(cfg, seed=2)
    out = project(proj, Tensor(rng.standard_normal((4, cfg.feature_dim)))).data
    assert not np.allclose(np.linalg.norm(out, axis=1), 1.0)


def test_zero_features_uniform_logits():
    _, _, cls = build_model(SMALL, seed=0)
    logits = classify(cls, Tensor(np.zeros((1, SMALL.feature_dim), np.float32))).data
    assert np.all(logits == logits[0, 0])


def test_classify_batch_independent(rng):
    _, _, cls = build_model(SMALL, seed=0)
    row = rng.standard_normal((1, SMALL.feature_dim)).astype(np.float32)
    one = classify(cls, Tensor(row)).data
    four = classify(cls, Tensor(np.repeat(row, 4, axis=0))).data
    for r in four:
        np.testing.assert_array_equal(r, one[0])
    p = np.exp(log_softmax(Tensor(four)).data).sum(axis=1)
    np.testing.assert_allclose(p, 1.0, rtol=1e-6)


def _train_steps(enc, cls, rng, n=5):
    params = {**enc.params, **cls.params}
    adam = AdamState()
    for _ in range(n):
        default_graph().clear()
        x = rng.random((4, 1, 32, 32)).astype(np.float32)
        loss = cross_entropy_view(classify(cls, encode(enc, x, "train")), [0, 1, 2, 3])
        for p in params.values():
            p.grad = None
        backward(loss)
        adam_step(params, adam, 1e-2)


@pytest.mark.parametrize("steps", [5, 10])
def test_freeze_is_total(rng, steps):
    enc, _, cls = build_model(SMALL, seed=0)
    set_frozen(enc, True)
    before = enc.copy_state()
    cls_before = cls.copy_state()
    _train_steps(enc, cls, rng, steps)
    after = enc.state_arrays()
    assert max(np.abs(after[k] - before[k]).max() for k in before) == 0
    assert all(p.grad is None for p in enc.params.values())
    assert any(not np.array_equal(cls.state_arrays()[k], cls_before[k]) for k in cls_before)


def test_unfreeze_resumes_updates(rng):
    enc, _, cls = build_model(SMALL, seed=0)
    set_frozen(enc, True)
    set_frozen(enc, False)
    before = enc.copy_state()
    _train_steps(enc, cls, rng, 1)
    assert any(not np.array_equal(enc.state_arrays()[k], before[k]) for k in before)


def test_train_mode_updates_running_stats(rng):
    enc, _, _ = build_model(SMALL, seed=0)
    before = enc.copy_state()
    encode(enc, rng.random((3, 1, 32, 32)), "train")
    key = "encoder.block0.bn0.running_mean"
    assert not np.array_equal(enc.state_arrays()[key], before[key])
    set_frozen(enc, True)
    snap = enc.copy_state()
    encode(enc, rng.random((3, 1, 32, 32)), "train")
    assert np.array_equal(enc.state_arrays()[key], snap[key])


def test_load_arrays_round_trip_and_mismatch():
    a, _, _ = build_model(SMALL, seed=0)
    b, _, _ = build_model(SMALL, seed=5)
    b.load_arrays(a.state_arrays())
    assert params_equal(a, b)
    big, _, _ = build_model(ModelConfig(input_size=32, block_channels=(3, 2, 3, 3, 4)), seed=0)
    with pytest.raises(ShapeError, match="encoder.block0.conv0.weight"):
        big.load_arrays(a.state_arrays())
