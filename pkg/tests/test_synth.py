import numpy as np
import pytest

from seastate.dataset import load_image, verify_manifest
from seastate.errors import ConfigError
from seastate.synth import (SynthConfig, SyntheticVideo, class_scales, generate_dataset, generate_texture,
                            gradient_statistic, nearest_centroid_baseline, to_uint8)


def test_texture_deterministic_and_in_range():
    a = generate_texture(3, seed=11, size=240)
    b = generate_texture(3, seed=11, size=240)
    assert np.array_equal(a, b)
    assert a.shape == (240, 240, 3) and a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, generate_texture(3, seed=12, size=240))


def test_scales_grow_with_class():
    w, a = zip(*(class_scales(c) for c in range(8)))
    assert all(np.diff(w) > 0) and all(np.diff(a) > 0)


def test_gradient_statistic_is_monotone_in_class():
    means = [np.mean([gradient_statistic(generate_texture(c, s, 240)) for s in range(6)]) for c in range(8)]
    assert all(np.diff(means) > 0), means


def test_gradient_statistic_dtype_agnostic():
    img = generate_texture(5, 0, 240)
    assert gradient_statistic(to_uint8(img)) == pytest.approx(gradient_statistic(img), rel=0.02)


def test_generated_dataset_is_balanced(tmp_path):
    m = generate_dataset(SynthConfig(num_classes=3, train_per_class=4, val_per_class=1, test_per_class=2,
                                     image_size=240, seed=2), tmp_path)
    assert verify_manifest(m).ok
    assert m.class_counts == {"train": {1: 4, 2: 4, 3: 4}, "val": {1: 1, 2: 1, 3: 1}, "test": {1: 2, 2: 2, 3: 2}}
    assert load_image(tmp_path / m.records[0].path).shape == (240, 240, 3)
    again = generate_dataset(SynthConfig(num_classes=3, train_per_class=4, val_per_class=1, test_per_class=2,
                                         image_size=240, seed=2), tmp_path / "again", workers=3)
    assert (tmp_path / "manifest.jsonl").read_bytes() == (tmp_path / "again/manifest.jsonl").read_bytes()
    for r in m.records:
        assert (tmp_path / r.path).read_bytes() == (tmp_path / "again" / r.path).read_bytes()


def test_simple_statistic_separates_classes(tmp_path):
    m = generate_dataset(SynthConfig(num_classes=8, train_per_class=6, test_per_class=6, image_size=224), tmp_path)
    assert nearest_centroid_baseline(m, tmp_path) > 0.5


def test_synthetic_video_frames():
    v = SyntheticVideo.from_uri("synth:frames=50;size=400x360;seed=3", label=2)
    assert (v.frame_count, v.resolution, v.class_index) == (50, (400, 360), 1)
    f = v.frame(7)
    assert f.shape == (360, 400, 3) and f.dtype == np.uint8
    assert np.array_equal(f, v.frame(7))
    assert not np.array_equal(f, v.frame(8))
    with pytest.raises(IndexError):
        v.frame(50)
    with pytest.raises(ConfigError):
        SyntheticVideo.from_uri("synth:size=10x10", 1)


@pytest.mark.parametrize("bad", [dict(num_classes=1), dict(image_size=100), dict(difficulty=0),
                                 dict(train_per_class=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SynthConfig(**bad)
