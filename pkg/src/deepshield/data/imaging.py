"""Shared image primitives: PNG I/O, bilinear resize, box blur.

Images move through the pipeline as channel-last float arrays in [0, 1];
files on disk are 8-bit RGB PNG. Resize is implemented here (rather than
delegating to a library) so results are bit-reproducible across versions.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ..errors import InputError


def load_rgb(path: str | Path) -> np.ndarray:
    """Read a PNG as (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def save_rgb(path: str | Path, img: np.ndarray) -> None:
    """Write a [0, 1] float image as 8-bit RGB PNG (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def image_dimensions(path: str | Path) -> tuple[int, int]:
    """(width, height) from the file header without decoding pixels."""
    with Image.open(path) as im:
        return im.size


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.astype(np.float32, copy=True)
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def box_blur(img: np.ndarray, kernel: int) -> np.ndarray:
    """Uniform kxk blur over the spatial axes of an HWC image."""
    if kernel < 1 or kernel % 2 == 0:
        raise InputError(f"box blur kernel must be odd and positive, got {kernel}")
    return ndimage.uniform_filter(img, size=(kernel, kernel, 1), mode="nearest").astype(np.float32)


def rotate90(img: np.ndarray, times: int) -> np.ndarray:
    """Clockwise rotation by times * 90 degrees: out[i, j] = in[n-1-j, i]."""
    return np.ascontiguousarray(np.rot90(img, k=-times, axes=(0, 1)))


def rotate_small(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about the image center, edges padded by replication."""
    out = ndimage.rotate(img, angle_deg, axes=(1, 0), reshape=False, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)
