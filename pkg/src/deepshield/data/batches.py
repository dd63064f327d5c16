"""Batch assembly: seeded shuffling, per-item augmentation, standardization.

Every image handed to a model is asserted square at the configured size;
augmentation seeds derive from (shuffle_seed, record key) so the result is
independent of assembly order or parallelism.
"""

from __future__ import annotations

import numpy as np

from ..config import AugmentConfig, DataConfig
from ..diffcore import Tensor
from ..errors import InputError
from .augment import augment, derive_item_seed
from .imaging import load_rgb
from .manifest import FaceRecord, Manifest


class ImageCache:
    """Process-local decoded-image cache keyed by path."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        img = self._store.get(path)
        if img is None:
            img = load_rgb(path)
            self._store[path] = img
        return img


def standardize(img_hwc: np.ndarray, data: DataConfig) -> np.ndarray:
    """[0,1] HWC float -> standardized CHW float32."""
    mean = np.asarray(data.pixel_mean, dtype=np.float32)
    std = np.asarray(data.pixel_std, dtype=np.float32)
    out = (img_hwc.astype(np.float32) - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def prepare_record_image(
    record: FaceRecord,
    final_size: int,
    data: DataConfig,
    augment_config: AugmentConfig | None,
    shuffle_seed: int,
    cache: ImageCache | None = None,
) -> np.ndarray:
    img = cache.get(record.image_path) if cache is not None else load_rgb(record.image_path)
    if img.shape[0] != img.shape[1]:
        raise InputError(f"image {record.image_path} is not square: {img.shape[:2]}")
    if augment_config is not None:
        rng = np.random.default_rng(derive_item_seed(shuffle_seed, *record.key))
        img = augment(img, augment_config, rng)
    if img.shape[0] != final_size:
        raise InputError(f"image {record.image_path} is {img.shape[0]}px, model expects {final_size}px")
    return standardize(img, data)


def make_batches(
    manifest: Manifest,
    batch_size: int,
    shuffle_seed: int,
    final_size: int,
    augment_config: AugmentConfig | None = None,
    data: DataConfig | None = None,
    cache: ImageCache | None = None,
    shuffle: bool = True,
):
    """Yield (images Tensor[B,3,S,S], labels Tensor[B]) in seeded order."""
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    if not manifest.records:
        raise InputError("cannot batch an empty manifest")
    if augment_config is not None and augment_config.final_size != final_size:
        raise InputError(
            f"augment final_size {augment_config.final_size} differs from batch final_size {final_size}"
        )
    data = data or DataConfig()
    order = list(range(len(manifest.records)))
    if shuffle:
        order = list(np.random.default_rng(shuffle_seed).permutation(len(order)))
    for start in range(0, len(order), batch_size):
        chunk = [manifest.records[i] for i in order[start : start + batch_size]]
        images = np.stack(
            [
                prepare_record_image(r, final_size, data, augment_config, shuffle_seed, cache)
                for r in chunk
            ]
        )
        labels = np.array([r.label for r in chunk], dtype=np.float32)
        yield Tensor(images), Tensor(labels)
