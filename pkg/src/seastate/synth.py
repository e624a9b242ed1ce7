"""Deterministic synthetic "sea texture" data.

Each class is a sum of a few oriented sinusoidal gratings plus smoothed
noise. Wavelength and amplitude both grow with the class index, with the
amplitude growing faster, so mean gradient magnitude rises strictly with the
class. That gives a learnable, ordered problem shaped like the Beaufort task
that needs no private video.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .dataset import (CropRegion, DatasetManifest, ImageRecord, SPLITS, Strategy, load_image,
                      save_image, write_manifest)
from .errors import ConfigError

MIN_WAVELENGTH = 6.0
WAVELENGTH_SPAN = 4.0
MIN_AMPLITUDE = 0.035
AMPLITUDE_SPAN = 11.0
SEA_TINT = np.array([0.22, 0.38, 0.50])
SEA_GAIN = np.array([0.9, 1.0, 1.1])


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    train_per_class: int = 100
    val_per_class: int = 0
    test_per_class: int = 30
    image_size: int = 331
    seed: int = 0
    difficulty: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.image_size < 224:
            raise ConfigError("image_size must be >= 224")
        if self.difficulty <= 0:
            raise ConfigError("difficulty must be positive")
        if min(self.train_per_class, self.val_per_class, self.test_per_class) < 0:
            raise ConfigError("per-class counts must be non-negative")

    def per_split(self) -> dict[str, int]:
        return {"train": self.train_per_class, "val": self.val_per_class, "test": self.test_per_class}


def class_scales(class_index: int, num_classes: int = 8) -> tuple[float, float]:
    """(wavelength px, amplitude) for a class, both geometric in the index."""
    u = class_index / max(num_classes - 1, 1)
    return MIN_WAVELENGTH * WAVELENGTH_SPAN ** u, MIN_AMPLITUDE * AMPLITUDE_SPAN ** u


def _texture_field(class_index, rng, width, height, num_classes, difficulty, time=0.0, phases=None):
    wavelength, amplitude = class_scales(class_index, num_classes)
    jitter = 0.03 * difficulty
    wavelength *= float(np.exp(rng.normal(0.0, jitter)))
    amplitude *= float(np.exp(rng.normal(0.0, jitter)))
    k = int(rng.integers(2, 5))
    base_angle = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    field = np.zeros((height, width))
    for i in range(k):
        lam = wavelength * rng.uniform(0.92, 1.08)
        theta = base_angle + rng.normal(0.0, 0.3)
        phase = rng.uniform(0, 2 * np.pi) if phases is None else phases[i % len(phases)]
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        field += np.sin(2 * np.pi * proj / lam + phase + time)
    field *= amplitude / np.sqrt(k)
    noise = rng.normal(0.0, 1.0, (height, width))
    noise = cv2.GaussianBlur(noise, (0, 0), sigmaX=max(wavelength / 4.0, 0.5), borderType=cv2.BORDER_REFLECT)
    noise /= noise.std() + 1e-12
    field += 0.25 * difficulty * amplitude * noise
    return field


def _colourise(field, rng):
    level = 1.0 + rng.uniform(-0.08, 0.08)
    rgb = SEA_TINT[None, None, :] * level + field[:, :, None] * SEA_GAIN[None, None, :]
    return np.clip(rgb, 0.0, 1.0)


def generate_texture(class_index: int, seed: int, size: int = 331, num_classes: int = 8,
                     difficulty: float = 1.0) -> np.ndarray:
    """A ``size`` x ``size`` x 3 float image in [0, 1] for one class."""
    if not 0 <= class_index < num_classes:
        raise ConfigError(f"class_index {class_index} outside 0..{num_classes - 1}")
    rng = np.random.default_rng([int(seed), int(class_index), int(size)])
    field = _texture_field(class_index, rng, size, size, num_classes, difficulty)
    return _colourise(field, rng)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def gradient_statistic(image: np.ndarray) -> float:
    """Mean gradient magnitude of the luminance channel."""
    img = np.asarray(image)
    img = img / 255.0 if img.dtype == np.uint8 else img.astype(np.float64)
    gray = img @ np.array([0.299, 0.587, 0.114]) if img.ndim == 3 else img
    gy, gx = np.gradient(gray)
    return float(np.mean(np.hypot(gx, gy)))


class SyntheticVideo:
    """A frame source whose frames are a slowly drifting synthetic texture.

    Addressed as ``synth:frames=N;size=WxH;seed=S[;classes=K]``; the class
    index is ``label - 1``.
    """

    def __init__(self, class_index, frame_count, width, height, seed=0, num_classes=8, fps=30.0):
        self.class_index = class_index
        self.frame_count = frame_count
        self.resolution = (width, height)
        self.seed = seed
        self.num_classes = num_classes
        self.fps = fps

    @classmethod
    def from_uri(cls, uri: str, label: int | None) -> "SyntheticVideo":
        body = uri.split(":", 1)[1]
        params = {}
        for part in filter(None, body.split(";")):
            key, _, value = part.partition("=")
            params[key.strip()] = value.strip()
        try:
            width, height = (int(v) for v in params.get("size", "640x480").lower().split("x"))
            frames = int(params["frames"])
        except (KeyError, ValueError):
            raise ConfigError(f"bad synthetic video uri {uri!r}") from None
        if label is None:
            raise ConfigError("synthetic video needs a class label")
        return cls(label - 1, frames, width, height, int(params.get("seed", 0)),
                   int(params.get("classes", 8)))

    def frame(self, index: int) -> np.ndarray:
        if not 0 <= index < self.frame_count:
            raise IndexError(index)
        rng = np.random.default_rng([self.seed, self.class_index, 7919])
        phases = rng.uniform(0, 2 * np.pi, 4)
        frame_rng = np.random.default_rng([self.seed, self.class_index, 104729])
        field = _texture_field(self.class_index, frame_rng, *self.resolution, self.num_classes, 1.0,
                               time=0.15 * index, phases=phases)
        noise_rng = np.random.default_rng([self.seed, self.class_index, index])
        return to_uint8(_colourise(field, noise_rng))

    def frames(self, indices):
        for idx in sorted(set(indices)):
            yield idx, self.frame(idx)


def generate_dataset(config: SynthConfig, out_dir: str | Path, name: str = "synth",
                     workers: int = 1) -> DatasetManifest:
    """Write a balanced synthetic dataset and its manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    size = config.image_size
    region = CropRegion(0, 0, size, size)
    jobs = []
    for c in range(config.num_classes):
        label = c + 1
        frame_index = 0
        for split in SPLITS:
            for i in range(config.per_split()[split]):
                rid = f"synth-c{label}_f{frame_index:06d}"
                rec = ImageRecord(rid, f"synth-c{label}", frame_index, region, label, split, Strategy.LL.value)
                image_seed = int(np.random.SeedSequence([config.seed, c, SPLITS.index(split), i])
                                 .generate_state(1)[0])
                jobs.append((rec, c, image_seed))
                frame_index += 1

    def work(job):
        rec, c, image_seed = job
        img = generate_texture(c, image_seed, size, config.num_classes, config.difficulty)
        save_image(out_dir / rec.path, to_uint8(img))
        return rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    manifest = DatasetManifest(name, Strategy.LL.value, config.seed, tuple(records), (1, config.num_classes))
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def nearest_centroid_baseline(manifest: DatasetManifest, root: str | Path,
                              train_split: str = "train", test_split: str = "test") -> float:
    """Test accuracy of nearest-centroid classification on ``gradient_statistic``."""
    root = Path(root)

    def stats(split):
        recs = manifest.split(split)
        return [r.label for r in recs], [gradient_statistic(load_image(root / r.path)) for r in recs]

    train_labels, train_stats = stats(train_split)
    centroids = {}
    for label in sorted(set(train_labels)):
        centroids[label] = float(np.mean([s for l, s in zip(train_labels, train_stats) if l == label]))
    test_labels, test_stats = stats(test_split)
    if not test_labels:
        raise ConfigError(f"split {test_split!r} is empty")
    labels = np.array(list(centroids))
    centres = np.array(list(centroids.values()))
    hits = sum(int(labels[np.argmin(np.abs(centres - s))] == l) for l, s in zip(test_labels, test_stats))
    return hits / len(test_labels)
