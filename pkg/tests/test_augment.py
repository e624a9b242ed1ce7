import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seastate.augment import (AugmentConfig, adjust_brightness_contrast, apply_motion_blur, augment_train,
                              center_offsets, contact_sheet, draw_params, flip, motion_blur,
                              motion_blur_kernel, prepare_eval, rotate, sample_rng, to_grayscale)
from seastate.errors import ConfigError, GeometryError


def image(seed=0, size=331):
    return np.random.default_rng(seed).integers(0, 256, (size, size, 3), dtype=np.uint8)


def binomial_ok(hits, n, p):
    return abs(hits - n * p) <= 3 * math.sqrt(n * p * (1 - p))


@pytest.mark.parametrize("k", [1, 3, 7, 15])
def test_blur_kernel_normalized(k):
    kernel = motion_blur_kernel(k)
    assert abs(kernel.sum() - 1.0) <= 1e-12
    assert np.count_nonzero(kernel) == k
    assert np.all(kernel[k // 2] == 1.0 / k)


def test_blur_preserves_constant_image():
    img = np.full((50, 60, 3), 0.3, np.float32)
    assert np.allclose(apply_motion_blur(img, 7), 0.3, atol=1e-6)


def test_blur_is_horizontal_only():
    img = np.zeros((20, 20, 3), np.float32)
    img[:, 10] = 1.0  # a vertical line smears sideways
    out = apply_motion_blur(img, 5)
    assert np.allclose(out[:, 8:13], 0.2)
    img = np.zeros((20, 20, 3), np.float32)
    img[10, :] = 1.0  # a horizontal line is unchanged
    assert np.allclose(apply_motion_blur(img, 5), img)


def test_blur_rejects_even_kernel():
    with pytest.raises(ConfigError):
        motion_blur(np.zeros((10, 10, 3), np.float32), np.random.default_rng(0), 1.0, 4)


def test_flip_involution():
    img = np.random.default_rng(1).random((40, 30, 3)).astype(np.float32)
    assert np.array_equal(flip(flip(img)), img)
    assert np.array_equal(flip(img)[:, 0], img[:, -1])


def test_center_offset_is_53():
    assert center_offsets((331, 331, 3), 224) == (53, 53)
    img = image(2)
    assert np.array_equal(prepare_eval(img), img[53:277, 53:277].astype(np.float32) / 255.0)


def test_identity_under_zeroed_probabilities():
    config = AugmentConfig.disabled(seed=0)
    img = image(3)
    for i in range(20):
        rng = sample_rng(0, 0, i)
        out = augment_train(img, rng, config)
        p = draw_params(img.shape, sample_rng(0, 0, i), config)
        expected = img[p.crop_y:p.crop_y + 224, p.crop_x:p.crop_x + 224].astype(np.float32) / 255.0
        assert np.array_equal(out, expected)


def test_disabled_center_crop_equals_eval():
    config = AugmentConfig.disabled(center_crop=True)
    img = image(4)
    assert np.array_equal(augment_train(img, np.random.default_rng(0), config), prepare_eval(img))


def test_application_rates_within_three_sigma():
    config = AugmentConfig()
    n = 1000
    draws = [draw_params((331, 331, 3), sample_rng(7, 0, i), config) for i in range(n)]
    assert binomial_ok(sum(d.blur for d in draws), n, 0.5)
    assert binomial_ok(sum(d.flip for d in draws), n, 0.5)
    assert binomial_ok(sum(d.grayscale for d in draws), n, 0.2)
    angles = np.array([d.angle for d in draws])
    assert angles.min() >= -0.2 * math.pi and angles.max() <= 0.2 * math.pi
    contrast = np.array([d.contrast for d in draws])
    assert contrast.min() >= 0.5 and contrast.max() <= 1.5
    bright = np.array([d.brightness for d in draws])
    assert bright.min() >= -0.2 and bright.max() <= 0.2
    offsets = np.array([(d.crop_y, d.crop_x) for d in draws])
    assert offsets.min() >= 0 and offsets.max() <= 107


def test_same_seed_same_output():
    img = image(5)
    a = augment_train(img, sample_rng(11, 3, 9), AugmentConfig())
    b = augment_train(img, sample_rng(11, 3, 9), AugmentConfig())
    c = augment_train(img, sample_rng(11, 4, 9), AugmentConfig())
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_output_range_and_shape(seed):
    out = augment_train(image(seed % 7), np.random.default_rng(seed), AugmentConfig())
    assert out.shape == (224, 224, 3)
    assert out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_grayscale_channels_equal():
    g = to_grayscale(np.random.default_rng(0).random((8, 8, 3)).astype(np.float32))
    assert np.array_equal(g[..., 0], g[..., 1]) and np.array_equal(g[..., 1], g[..., 2])


def test_rotation_zero_is_identity_and_keeps_range():
    img = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
    assert rotate(img, 0.0) is img
    out = rotate(img, 0.5)
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


def test_brightness_contrast_clip():
    img = np.full((4, 4, 3), 0.9, np.float32)
    assert adjust_brightness_contrast(img, 0.2, 1.0).max() == 1.0
    assert np.allclose(adjust_brightness_contrast(img, 0.0, 1.5), 0.9)


def test_small_images_rejected():
    with pytest.raises(GeometryError):
        augment_train(np.zeros((200, 200, 3), np.uint8), np.random.default_rng(0))
    with pytest.raises(GeometryError):
        prepare_eval(np.zeros((100, 300, 3), np.uint8))


@pytest.mark.parametrize("bad", [dict(flip_prob=1.5), dict(blur_kernel_size=4), dict(contrast_range=(0, 1)),
                                 dict(rotation_range=(1, -1)), dict(brightness_mode="gamma")])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        AugmentConfig(**bad)


def test_contact_sheet_shape():
    sheet = contact_sheet([np.zeros((10, 10, 3), np.float32)] * 5, cols=2, pad=1)
    assert sheet.shape == (3 * 10 + 4, 2 * 10 + 3, 3)
