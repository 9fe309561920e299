from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echoview.augment import (
    AugmentConfig,
    AugmentParams,
    FrameImage,
    affine_warp,
    apply_params,
    augment_batch,
    augment_once,
    make_contrastive_batch,
    preprocess,
    sample_params,
    sample_stream,
)
from echoview.labels import ViewLabel


def image(rng, size=32):
    return FrameImage(rng.random((1, size, size)).astype(np.float32))


def test_preprocess_constant_is_zero():
    out = preprocess(np.full((50, 40), 77, dtype=np.uint8), 32)
    assert out.pixels.shape == (1, 32, 32)
    np.testing.assert_array_equal(out.pixels, 0)


def test_preprocess_two_valued_is_exactly_binary(rng):
    raw = (rng.random((192, 192)) > 0.5).astype(np.uint8) * 255
    out = preprocess(raw, 192).pixels
    assert set(np.unique(out)) == {0.0, 1.0}


def test_preprocess_random_range(rng):
    out = preprocess(rng.integers(0, 256, size=(256, 200)).astype(np.uint8), 192).pixels
    assert out.shape == (1, 192, 192)
    assert abs(out.min()) < 1e-7 and abs(out.max() - 1) < 1e-7


def test_preprocess_rejects_empty():
    with pytest.raises(ValueError):
        preprocess(np.zeros((0, 5), dtype=np.uint8))


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(max_translation_frac=1.0)
    with pytest.raises(ValueError):
        AugmentConfig(max_rotation_deg=181)
    with pytest.raises(ValueError):
        AugmentConfig(contrast_range=(1.2, 1.5))


def test_identity_config_is_bitwise_identity(rng):
    img = image(rng)
    out = augment_once(img, AugmentConfig.identity(), sample_stream(0, 1))
    assert out.pixels.tobytes() == img.pixels.tobytes()


def test_brightness_clamps_at_one():
    img = np.full((1, 16, 16), 0.5, dtype=np.float32)
    out = apply_params(img, AugmentParams(0.0, (0.0, 0.0), 1.0, 1.0, None))
    np.testing.assert_array_equal(out, 1.0)


def test_same_seed_same_output(rng):
    img = image(rng)
    a = augment_once(img, AugmentConfig(), sample_stream((4, 2), 9, 0))
    b = augment_once(img, AugmentConfig(), sample_stream((4, 2), 9, 0))
    assert a.pixels.tobytes() == b.pixels.tobytes()


def test_batch_is_thread_count_invariant(rng):
    frames = [image(rng) for _ in range(12)]
    ids = list(range(100, 112))
    serial = augment_batch(frames, AugmentConfig(), (1, 0, 3), ids)
    with ThreadPoolExecutor(4) as pool:
        parallel = augment_batch(frames, AugmentConfig(), (1, 0, 3), ids, pool)
    assert serial.tobytes() == parallel.tobytes()


def test_params_depend_only_on_seed_and_id(rng):
    frames = [image(rng) for _ in range(4)]
    full = augment_batch(frames, AugmentConfig(), 7, [10, 11, 12, 13])
    part = augment_batch(frames[2:], AugmentConfig(), 7, [12, 13])
    assert full[2:].tobytes() == part.tobytes()


@given(st.integers(0, 2**32 - 1))
def test_outputs_stay_in_unit_range(seed):
    rng = np.random.default_rng(seed)
    cfg = AugmentConfig(brightness_delta=0.5, contrast_range=(0.5, 2.0), crop_size=int(rng.integers(8, 24)))
    out = augment_once(image(rng), cfg, rng)
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    assert out.pixels.shape == (1, 32, 32)


def test_sampled_ranges(rng):
    cfg = AugmentConfig()
    for _ in range(200):
        p = sample_params(cfg, 100, rng)
        assert -30 <= p.rotation_deg <= 30
        assert all(abs(s) <= 10 for s in p.shift)
        assert -0.2 <= p.brightness <= 0.2
        assert 0.8 <= p.contrast <= 1.25
        assert p.crop_origin is None


def test_crop_must_be_smaller_than_image(rng):
    with pytest.raises(ValueError):
        sample_params(AugmentConfig(crop_size=32), 32, rng)


def test_rotation_round_trip_on_disk():
    n = 64
    yy, xx = np.mgrid[0:n, 0:n]
    r = np.hypot(yy - (n - 1) / 2, xx - (n - 1) / 2)
    disk = np.clip((20 - r) / 3, 0, 1)  # soft edge keeps interpolation error small
    back = affine_warp(affine_warp(disk, 25.0, (0, 0)), -25.0, (0, 0))
    assert np.abs(back - disk).max() <= 0.1


def test_translation_moves_content():
    img = np.zeros((20, 20))
    img[5, 5] = 1.0
    out = affine_warp(img, 0.0, (3.0, -2.0))
    assert out[8, 3] == pytest.approx(1.0)


def test_contrastive_batch_layout(rng):
    one = make_contrastive_batch([(image(rng), ViewLabel.C_3CH)], AugmentConfig(), 0)
    assert one.images.shape == (2, 1, 32, 32)
    assert one.twin_index == [1, 0]
    frames = [(image(rng), ViewLabel.from_index(i % 13)) for i in range(32)]
    cb = make_contrastive_batch(frames, AugmentConfig(), 5)
    assert cb.images.shape[0] == 64
    for i, t in enumerate(cb.twin_index):
        assert cb.twin_index[t] == i and t != i and cb.labels[i] == cb.labels[t]


def test_identity_twins_are_identical(rng):
    cb = make_contrastive_batch([(image(rng), ViewLabel.NC_SSN)] * 3, AugmentConfig.identity(), 1)
    for i in range(3):
        assert cb.images[i].tobytes() == cb.images[i + 3].tobytes()


def test_twins_differ_under_augmentation(rng):
    cb = make_contrastive_batch([(image(rng), ViewLabel.NC_SSN)], AugmentConfig(), 1)
    assert cb.images[0].tobytes() != cb.images[1].tobytes()


def test_empty_contrastive_batch_rejected():
    with pytest.raises(ValueError):
        make_contrastive_batch([], AugmentConfig(), 0)
