"""Training-time augmentation and the evaluation-time center crop.

Training images go through, in order: random 224 crop, horizontal motion
blur, horizontal flip, brightness/contrast jitter, rotation and grayscale.
Every random quantity for one image is drawn up front from a single
generator (see :func:`draw_params`), so one seed always yields the same
output no matter which transforms end up firing.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import cv2
import numpy as np

from .errors import ConfigError, GeometryError

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class AugmentConfig:
    crop_out: int = 224
    motion_blur_prob: float = 0.5
    blur_kernel_size: int = 7
    flip_prob: float = 0.5
    brightness_delta_range: tuple[float, float] = (-0.2, 0.2)
    brightness_mode: str = "additive"
    contrast_range: tuple[float, float] = (0.5, 1.5)
    rotation_range: tuple[float, float] = (-0.2 * math.pi, 0.2 * math.pi)
    grayscale_prob: float = 0.2
    center_crop: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("motion_blur_prob", "flip_prob", "grayscale_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if not 1 <= self.crop_out <= 331:
            raise ConfigError(f"crop_out must be in 1..331, got {self.crop_out}")
        k = self.blur_kernel_size
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"blur_kernel_size must be odd and >= 1, got {k}")
        lo, hi = self.contrast_range
        if lo <= 0 or hi < lo:
            raise ConfigError(f"contrast_range must be positive and ordered, got {self.contrast_range}")
        for name in ("brightness_delta_range", "rotation_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"{name} must be ordered, got {(lo, hi)}")
        if self.brightness_mode not in ("additive", "multiplicative"):
            raise ConfigError(f"unknown brightness_mode {self.brightness_mode!r}")

    @classmethod
    def disabled(cls, **overrides) -> "AugmentConfig":
        """A config under which every transform except the crop is an identity."""
        base = dict(motion_blur_prob=0.0, flip_prob=0.0, brightness_delta_range=(0.0, 0.0),
                    contrast_range=(1.0, 1.0), rotation_range=(0.0, 0.0), grayscale_prob=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentParams:
    crop_y: int
    crop_x: int
    blur: bool
    flip: bool
    brightness: float
    contrast: float
    angle: float
    grayscale: bool
    applied: dict = field(default_factory=dict, compare=False)


def as_float(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float32) / np.float32(255.0)
    return image.astype(np.float32, copy=False)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent generator for one (epoch, sample) draw."""
    return np.random.default_rng([int(seed), int(epoch), int(index)])


def crop_offsets(shape, out: int, rng: np.random.Generator) -> tuple[int, int]:
    h, w = shape[:2]
    if h < out or w < out:
        raise GeometryError(f"image {w}x{h} smaller than {out}x{out} crop")
    return int(rng.integers(0, h - out + 1)), int(rng.integers(0, w - out + 1))


def random_crop(image: np.ndarray, out: int, rng: np.random.Generator) -> np.ndarray:
    y, x = crop_offsets(image.shape, out, rng)
    return image[y:y + out, x:x + out].copy()


def center_offsets(shape, out: int) -> tuple[int, int]:
    h, w = shape[:2]
    if h < out or w < out:
        raise GeometryError(f"image {w}x{h} smaller than {out}x{out} crop")
    return (h - out) // 2, (w - out) // 2


def prepare_eval(image: np.ndarray, out: int = 224) -> np.ndarray:
    """Deterministic center crop to ``out`` x ``out``, as float32 in [0, 1]."""
    y, x = center_offsets(np.shape(image), out)
    return as_float(image[y:y + out, x:x + out]).copy()


def motion_blur_kernel(k: int = 7) -> np.ndarray:
    """k x k kernel with 1/k on every tap of the middle row."""
    kernel = np.zeros((k, k), dtype=np.float64)
    kernel[k // 2, :] = 1.0 / k
    return kernel


def apply_motion_blur(image: np.ndarray, k: int = 7) -> np.ndarray:
    return cv2.filter2D(image, -1, motion_blur_kernel(k), borderType=cv2.BORDER_REPLICATE)


def motion_blur(image: np.ndarray, rng: np.random.Generator, p: float = 0.5, k: int = 7) -> np.ndarray:
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"blur kernel size must be odd, got {k}")
    if rng.random() < p:
        return apply_motion_blur(image, k)
    return image


def flip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def adjust_brightness_contrast(image: np.ndarray, delta: float, factor: float,
                               mode: str = "additive") -> np.ndarray:
    out = image + np.float32(delta) if mode == "additive" else image * np.float32(delta)
    out = np.clip(out, 0.0, 1.0)
    if factor != 1.0:
        mean = out.mean(axis=(0, 1), keepdims=True)
        out = np.clip((out - mean) * np.float32(factor) + mean, 0.0, 1.0)
    return out.astype(np.float32, copy=False)


def rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate by ``angle`` radians about the center; bilinear, edge-replicated border."""
    if angle == 0.0:
        return image
    h, w = image.shape[:2]
    matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), math.degrees(angle), 1.0)
    out = cv2.warpAffine(image, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return np.clip(out, 0.0, 1.0)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    lum = np.clip(image @ LUMA, 0.0, 1.0)
    return np.repeat(lum[:, :, None], 3, axis=2).astype(np.float32)


def draw_params(shape, rng: np.random.Generator, config: AugmentConfig) -> AugmentParams:
    """All random choices for one image, always drawn in the same order."""
    if config.center_crop:
        cy, cx = center_offsets(shape, config.crop_out)
        rng.integers(0, 1, size=2)
    else:
        cy, cx = crop_offsets(shape, config.crop_out, rng)
    u_blur, u_flip, u_bright, u_contrast, u_angle, u_gray = rng.random(6)
    b_lo, b_hi = config.brightness_delta_range
    c_lo, c_hi = config.contrast_range
    r_lo, r_hi = config.rotation_range
    return AugmentParams(
        crop_y=cy,
        crop_x=cx,
        blur=bool(u_blur < config.motion_blur_prob),
        flip=bool(u_flip < config.flip_prob),
        brightness=float(b_lo + (b_hi - b_lo) * u_bright),
        contrast=float(c_lo + (c_hi - c_lo) * u_contrast),
        angle=float(r_lo + (r_hi - r_lo) * u_angle),
        grayscale=bool(u_gray < config.grayscale_prob),
    )


def apply_params(image: np.ndarray, params: AugmentParams, config: AugmentConfig) -> np.ndarray:
    out_size = config.crop_out
    img = as_float(image[params.crop_y:params.crop_y + out_size, params.crop_x:params.crop_x + out_size])
    img = img.copy()
    if params.blur:
        img = apply_motion_blur(img, config.blur_kernel_size)
    if params.flip:
        img = flip(img)
    neutral = 0.0 if config.brightness_mode == "additive" else 1.0
    if params.brightness != neutral or params.contrast != 1.0:
        img = adjust_brightness_contrast(img, params.brightness, params.contrast, config.brightness_mode)
    img = rotate(img, params.angle)
    if params.grayscale:
        img = to_grayscale(img)
    return img


def flip_brightness_contrast_rotate_grayscale(image: np.ndarray, rng: np.random.Generator,
                                              config: AugmentConfig) -> np.ndarray:
    """The photometric/geometric part of the training stack, without crop or blur."""
    img = as_float(image)
    u_flip, u_bright, u_contrast, u_angle, u_gray = rng.random(5)
    if u_flip < config.flip_prob:
        img = flip(img)
    b_lo, b_hi = config.brightness_delta_range
    c_lo, c_hi = config.contrast_range
    delta = b_lo + (b_hi - b_lo) * u_bright
    factor = c_lo + (c_hi - c_lo) * u_contrast
    neutral = 0.0 if config.brightness_mode == "additive" else 1.0
    if delta != neutral or factor != 1.0:
        img = adjust_brightness_contrast(img, delta, factor, config.brightness_mode)
    r_lo, r_hi = config.rotation_range
    img = rotate(img, r_lo + (r_hi - r_lo) * u_angle)
    if u_gray < config.grayscale_prob:
        img = to_grayscale(img)
    return img


def augment_train(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig = AugmentConfig()
                  ) -> np.ndarray:
    h, w = np.shape(image)[:2]
    if config.crop_out > min(h, w):
        raise GeometryError(f"image {w}x{h} smaller than {config.crop_out}x{config.crop_out} crop")
    return apply_params(image, draw_params(np.shape(image), rng, config), config)


def contact_sheet(images, cols: int, pad: int = 4) -> np.ndarray:
    """Tile equally sized images into one grid image, white padding between tiles."""
    images = [as_float(im) for im in images]
    if not images:
        raise ValueError("no images to tile")
    h, w = images[0].shape[:2]
    rows = -(-len(images) // cols)
    sheet = np.ones((rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad, 3), dtype=np.float32)
    for i, im in enumerate(images):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        sheet[y:y + h, x:x + w] = im
    return sheet


def with_overrides(config: AugmentConfig, **changes) -> AugmentConfig:
    return replace(config, **changes)
