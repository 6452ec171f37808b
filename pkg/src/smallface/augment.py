"""Training-time augmentation: multi-scale resize, random crop, photometric
distortion, horizontal flip.

Geometric ops transform the image and its (Box, ignored) annotations
together; photometric ops never touch the boxes. Every op takes an explicit
numpy Generator, so a pipeline is a pure function of (inputs, rng state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, clip_box, flip_box
from .imageops import hflip_image, resize_image, scale_for_short_side, scaled_size


@dataclass(frozen=True)
class AugmentConfig:
    short_side_choices: tuple[int, ...] = (400, 800, 1200)
    long_side_cap: int = 2000
    crop_prob: float = 0.5
    crop_low: float = 0.6
    photometric_prob: float = 0.5
    brightness_delta: float = 32.0 / 255.0
    contrast_range: tuple[float, float] = (0.5, 1.5)
    saturation_range: tuple[float, float] = (0.5, 1.5)
    hue_delta_deg: float = 18.0

    def __post_init__(self):
        if not (0.0 < self.crop_low <= 1.0):
            raise ValueError(f"crop_low must be in (0, 1], got {self.crop_low}")
        if any(b < a for a, b in zip(self.short_side_choices, self.short_side_choices[1:])):
            raise ValueError(f"short_side_choices must be ascending, got {self.short_side_choices}")


def resize_for_training(image, gts, cfg: AugmentConfig, rng):
    """Resize so the short side hits a randomly chosen target, long side capped."""
    h, w = image.shape[:2]
    short = int(rng.choice(np.asarray(cfg.short_side_choices)))
    scale = scale_for_short_side(h, w, short, cfg.long_side_cap)
    out_h, out_w = scaled_size(h, w, scale)
    out = resize_image(image, out_h, out_w)
    sy, sx = out_h / h, out_w / w
    boxes = [(Box(b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy), ign)
             for b, ign in gts]
    return out, boxes


def random_crop(image, gts, cfg: AugmentConfig, rng):
    """Crop a U(crop_low*H, H) x U(crop_low*W, W) patch with prob crop_prob.

    Boxes whose centers fall strictly inside the patch are kept, translated
    and clipped to it; the rest are dropped.
    """
    if rng.random() >= cfg.crop_prob:
        return image, gts
    h, w = image.shape[:2]
    ch = min(h, max(1, int(round(rng.uniform(cfg.crop_low * h, h)))))
    cw = min(w, max(1, int(round(rng.uniform(cfg.crop_low * w, w)))))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    patch = image[y0:y0 + ch, x0:x0 + cw].copy()
    kept = []
    for b, ign in gts:
        cx, cy = b.center
        if x0 < cx < x0 + cw and y0 < cy < y0 + ch:
            moved = Box(b.x_min - x0, b.y_min - y0, b.x_max - x0, b.y_max - y0)
            kept.append((clip_box(moved, ch, cw), ign))
    return patch, kept


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    v = maxc
    rng_c = maxc - minc
    s = np.where(maxc > 0, rng_c / np.maximum(maxc, 1e-12), 0.0)
    rc = np.where(rng_c > 0, (maxc - r) / np.maximum(rng_c, 1e-12), 0.0)
    gc = np.where(rng_c > 0, (maxc - g) / np.maximum(rng_c, 1e-12), 0.0)
    bc = np.where(rng_c > 0, (maxc - b) / np.maximum(rng_c, 1e-12), 0.0)
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(rng_c > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices_r = np.stack([v, q, p, p, t, v], axis=-1)
    choices_g = np.stack([t, v, v, q, p, p], axis=-1)
    choices_b = np.stack([p, p, t, v, v, q], axis=-1)
    idx = i[..., None]
    r = np.take_along_axis(choices_r, idx, axis=-1)[..., 0]
    g = np.take_along_axis(choices_g, idx, axis=-1)[..., 0]
    b = np.take_along_axis(choices_b, idx, axis=-1)[..., 0]
    return np.stack([r, g, b], axis=-1)


def photometric_distort(image, cfg: AugmentConfig, rng) -> np.ndarray:
    """Brightness, contrast, saturation, hue; each applied with its own coin flip."""
    out = image.astype(np.float64)
    if rng.random() < cfg.photometric_prob:
        out = out + rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    if rng.random() < cfg.photometric_prob:
        out = out * rng.uniform(*cfg.contrast_range)
    do_sat = rng.random() < cfg.photometric_prob
    sat = rng.uniform(*cfg.saturation_range) if do_sat else 1.0
    do_hue = rng.random() < cfg.photometric_prob
    hue = rng.uniform(-cfg.hue_delta_deg, cfg.hue_delta_deg) if do_hue else 0.0
    if do_sat or do_hue:
        hsv = _rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 1] = np.clip(hsv[..., 1] * sat, 0.0, 1.0)
        hsv[..., 0] = (hsv[..., 0] + hue / 360.0) % 1.0
        out = _hsv_to_rgb(hsv)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def hue_shift(image, degrees: float) -> np.ndarray:
    """Pure hue rotation; a 360 degree shift is the identity."""
    hsv = _rgb_to_hsv(np.clip(image.astype(np.float64), 0.0, 1.0))
    hsv[..., 0] = (hsv[..., 0] + degrees / 360.0) % 1.0
    return _hsv_to_rgb(hsv).astype(image.dtype)


def hflip(image, gts):
    """Mirror the image columns and the boxes."""
    w = image.shape[1]
    return hflip_image(image), [(flip_box(b, w), ign) for b, ign in gts]
