"""In-memory access to the images of one manifest split."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_train, prepare_eval, sample_rng
from .dataset import DatasetManifest, ImageRecord, load_image
from .errors import DataError


class SplitImages:
    """uint8 images and 0-based class indices for one split, loaded once."""

    def __init__(self, manifest: DatasetManifest, root: str | Path, split: str,
                 records: list[ImageRecord] | None = None):
        self.root = Path(root)
        self.split = split
        self.records = list(records) if records is not None else manifest.split(split)
        if not self.records:
            raise DataError(f"split {split!r} of {manifest.name} is empty")
        self.label_min = manifest.label_range[0]
        self.images = [load_image(self.root / r.path) for r in self.records]
        self.labels = np.array([r.label for r in self.records], dtype=np.int64)
        self.targets = self.labels - self.label_min

    def __len__(self):
        return len(self.records)

    def eval_batch(self, indices, out: int = 224) -> np.ndarray:
        return np.stack([prepare_eval(self.images[i], out) for i in indices])

    def train_batch(self, indices, epoch: int, config: AugmentConfig, seed: int, pool=None) -> np.ndarray:
        def one(i):
            return augment_train(self.images[i], sample_rng(seed, epoch, i), config)

        items = pool.map(one, indices) if pool is not None else map(one, indices)
        return np.stack(list(items))


def eval_crops(split: SplitImages, out: int = 224) -> np.ndarray:
    """Center crops of the whole split, as uint8 to keep memory small."""
    crops = np.empty((len(split), out, out, 3), dtype=np.uint8)
    for i, img in enumerate(split.images):
        crops[i] = np.clip(np.rint(prepare_eval(img, out) * 255.0), 0, 255).astype(np.uint8)
    return crops
