"""Training-time augmentation: blur, noise, transposition, rotation, resizes.

Each transform fires independently with its configured probability; the
whole pipeline is a pure function of (image, config, rng seed). Output is
always square at ``final_size`` with values clipped to [0, 1].
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..config import AugmentConfig
from ..errors import InputError
from .imaging import box_blur, resize_bilinear, rotate90, rotate_small


def derive_item_seed(shuffle_seed: int, video_id: str, frame_index: int, actor_id: str) -> int:
    """Stable per-record seed so parallel batch prep cannot change results."""
    digest = hashlib.sha256(f"{shuffle_seed}|{video_id}|{frame_index}|{actor_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the configured transforms to one (H, W, 3) [0,1] float image."""
    if image.ndim != 3 or image.shape[0] != image.shape[1]:
        raise InputError(f"augment expects a square HWC image, got shape {image.shape}")
    img = image.astype(np.float32, copy=True)

    if rng.random() < config.blur.p:
        kernel = int(config.blur.kernel_sizes[rng.integers(len(config.blur.kernel_sizes))])
        img = box_blur(img, kernel)

    if rng.random() < config.gaussian_noise.p:
        lo, hi = config.gaussian_noise.sigma_range
        sigma = rng.uniform(lo, hi)
        img = img + rng.normal(0.0, sigma, size=img.shape).astype(np.float32)
        img = np.clip(img, 0.0, 1.0)

    if rng.random() < config.transpose.p:
        img = np.ascontiguousarray(np.swapaxes(img, 0, 1))

    if rng.random() < config.rotation.p:
        if config.rotation.right_angles and rng.random() < 0.5:
            angle = int(config.rotation.right_angles[rng.integers(len(config.rotation.right_angles))])
            img = rotate90(img, (angle // 90) % 4)
        else:
            angle = rng.uniform(-config.rotation.small_angle_max, config.rotation.small_angle_max)
            img = rotate_small(img, angle)

    if rng.random() < config.isotropic_resize.p:
        lo, hi = config.isotropic_resize.scale_range
        side = img.shape[0]
        scaled = max(1, int(round(side * rng.uniform(lo, hi))))
        if scaled != side:
            img = resize_bilinear(img, scaled, scaled)
            img = resize_bilinear(img, side, side)

    if img.shape[0] != config.final_size:
        img = resize_bilinear(img, config.final_size, config.final_size)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
