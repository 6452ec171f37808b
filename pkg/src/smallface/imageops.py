"""Pixel-level helpers shared by augmentation and inference.

Images are (H, W, 3) float arrays in [0, 1]. Bilinear sampling uses the
half-pixel-center convention: output pixel d reads the source at
(d + 0.5) * in/out - 0.5, clamped to the border. Using the exact out/in
ratio per axis keeps resizing mirror-consistent and makes the inverse
mapping of box coordinates exact.
"""

from __future__ import annotations

import numpy as np


def _axis_coeffs(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (src - i0).astype(np.float32)
    return i0, i1, 1.0 - frac, frac


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) image to (out_h, out_w, C)."""
    h, w = image.shape[:2]
    if out_h == h and out_w == w:
        return image.copy()
    y0, y1, wy0, wy1 = _axis_coeffs(h, out_h)
    x0, x1, wx0, wx1 = _axis_coeffs(w, out_w)
    rows = image[y0] * wy0[:, None, None] + image[y1] * wy1[:, None, None]
    out = rows[:, x0] * wx0[None, :, None] + rows[:, x1] * wx1[None, :, None]
    return out.astype(image.dtype, copy=False)


def scaled_size(h: int, w: int, scale: float) -> tuple[int, int]:
    return max(1, int(round(h * scale))), max(1, int(round(w * scale)))


def scale_for_short_side(h: int, w: int, short_side: int, long_side_cap: int) -> float:
    """Scale factor putting short_side pixels on the short edge, capped by the long edge."""
    scale = short_side / min(h, w)
    return min(scale, long_side_cap / max(h, w))


def hflip_image(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def pad_to_multiple(image: np.ndarray, multiple: int) -> np.ndarray:
    """Zero-pad bottom/right so both spatial dims divide `multiple`."""
    h, w = image.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, ph), (0, pw), (0, 0)))


def to_nchw(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(H, W, C) -> (1, C, H, W) tensor."""
    return np.ascontiguousarray(image.transpose(2, 0, 1)[None], dtype=dtype)
