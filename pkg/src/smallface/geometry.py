"""Boxes, IoU, anchor grids and box<->delta coding.

Coordinates are pixels with the origin at the top-left corner. Boxes are
closed intervals [x_min, x_max] x [y_min, y_max]; width = x_max - x_min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"degenerate box: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)


@dataclass(frozen=True)
class Delta:
    """Box regression target: center offsets normalized by anchor size, log size ratios."""

    tx: float
    ty: float
    tw: float
    th: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th], dtype=np.float64)


@dataclass(frozen=True)
class AnchorConfig:
    stride: int = 8
    sizes: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError(f"anchor sizes must be strictly increasing, got {self.sizes}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))


@dataclass
class AnchorGrid:
    """All anchors for one image, indexed (size_idx, row, col), size_idx slowest.

    Anchor (k, i, j) is a square of side sizes[k] centered at the cell center
    ((j + 0.5) * stride, (i + 0.5) * stride). Anchors are not clipped to the
    image.
    """

    config: AnchorConfig
    feat_h: int
    feat_w: int
    boxes_xyxy: np.ndarray = field(repr=False)  # (A, 4) float64

    @property
    def num_anchors(self) -> int:
        return len(self.config.sizes) * self.feat_h * self.feat_w

    def anchor_index(self, size_idx: int, row: int, col: int) -> int:
        return (size_idx * self.feat_h + row) * self.feat_w + col

    def anchor_box(self, index: int) -> Box:
        x0, y0, x1, y1 = self.boxes_xyxy[index]
        return Box(float(x0), float(y0), float(x1), float(y1))

    @property
    def boxes(self) -> list[Box]:
        return [self.anchor_box(i) for i in range(self.num_anchors)]


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union has zero area."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (N, 4) / (M, 4) xyxy arrays, returns (N, M)."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64)
    boxes_b = np.asarray(boxes_b, dtype=np.float64)
    if boxes_a.size == 0 or boxes_b.size == 0:
        return np.zeros((boxes_a.shape[0], boxes_b.shape[0]), dtype=np.float64)
    lt = np.maximum(boxes_a[:, None, :2], boxes_b[None, :, :2])
    rb = np.minimum(boxes_a[:, None, 2:], boxes_b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def generate_anchors(image_h: int, image_w: int, config: AnchorConfig = AnchorConfig()) -> AnchorGrid:
    """Tile |sizes| square anchors over a ceil(H/stride) x ceil(W/stride) grid."""
    if image_h <= 0 or image_w <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_h}x{image_w}")
    stride = config.stride
    feat_h = -(-image_h // stride)
    feat_w = -(-image_w // stride)
    cx = (np.arange(feat_w, dtype=np.float64) + 0.5) * stride
    cy = (np.arange(feat_h, dtype=np.float64) + 0.5) * stride
    cxg, cyg = np.meshgrid(cx, cy)  # (feat_h, feat_w)
    centers = np.stack([cxg.ravel(), cyg.ravel()], axis=1)  # (feat_h*feat_w, 2)
    per_size = []
    for size in config.sizes:
        half = size / 2.0
        per_size.append(
            np.concatenate([centers - half, centers + half], axis=1)
        )
    boxes = np.concatenate(per_size, axis=0)
    return AnchorGrid(config=config, feat_h=feat_h, feat_w=feat_w, boxes_xyxy=boxes)


def encode(anchor: Box, gt: Box) -> Delta:
    """Encode a ground-truth box relative to an anchor."""
    if anchor.area <= 0 or gt.area <= 0:
        raise ValueError("encode requires boxes with positive area")
    acx, acy = anchor.center
    gcx, gcy = gt.center
    return Delta(
        tx=(gcx - acx) / anchor.width,
        ty=(gcy - acy) / anchor.height,
        tw=math.log(gt.width / anchor.width),
        th=math.log(gt.height / anchor.height),
    )


def decode(anchor: Box, d: Delta) -> Box:
    """Inverse of encode; the result may extend outside the image."""
    if anchor.area <= 0:
        raise ValueError("decode requires an anchor with positive area")
    acx, acy = anchor.center
    cx = acx + d.tx * anchor.width
    cy = acy + d.ty * anchor.height
    w = anchor.width * math.exp(d.tw)
    h = anchor.height * math.exp(d.th)
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def encode_arrays(anchors: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Vectorized encode over matched (N, 4) anchor / gt xyxy arrays."""
    anchors = np.asarray(anchors, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    gw = gts[:, 2] - gts[:, 0]
    gh = gts[:, 3] - gts[:, 1]
    gcx = gts[:, 0] + 0.5 * gw
    gcy = gts[:, 1] + 0.5 * gh
    return np.stack(
        [(gcx - acx) / aw, (gcy - acy) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1
    )


def decode_arrays(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Vectorized decode of (N, 4) deltas against (N, 4) anchors."""
    anchors = np.asarray(anchors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * np.exp(deltas[:, 2])
    h = ah * np.exp(deltas[:, 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def clip_box(b: Box, image_h: int, image_w: int) -> Box:
    """Intersect a box with the image rectangle [0, w] x [0, h]."""
    return Box(
        min(max(b.x_min, 0.0), float(image_w)),
        min(max(b.y_min, 0.0), float(image_h)),
        min(max(b.x_max, 0.0), float(image_w)),
        min(max(b.y_max, 0.0), float(image_h)),
    )


def flip_box(b: Box, image_w: int) -> Box:
    """Mirror a box horizontally inside an image of width image_w."""
    return Box(image_w - b.x_max, b.y_min, image_w - b.x_min, b.y_max)


def clip_boxes_array(boxes: np.ndarray, image_h: float, image_w: float) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).copy()
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, float(image_w))
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, float(image_h))
    return boxes


def flip_boxes_array(boxes: np.ndarray, image_w: float) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    out = boxes.copy()
    out[:, 0] = image_w - boxes[:, 2]
    out[:, 2] = image_w - boxes[:, 0]
    return out
