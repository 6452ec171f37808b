"""Multi-scale pyramid testing: per-scale detection, optional horizontal
flip, greedy NMS and bounding-box voting.

Each pyramid entry resizes the image so its short side hits the target,
capped by the long side; detections are mapped back to original-image
coordinates before the single global NMS pass. Candidates are concatenated
in a deterministic (scale, flip, anchor) order so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (Box, clip_boxes_array, decode_arrays, flip_boxes_array,
                       generate_anchors, iou_matrix, AnchorConfig)
from .imageops import hflip_image, pad_to_multiple, resize_image, scale_for_short_side, scaled_size, to_nchw


@dataclass(frozen=True)
class InferConfig:
    pyramid_short_sides: tuple[int, ...] = (100, 300, 600, 1000, 1400)
    long_side_cap: int = 2000
    flip: bool = True
    score_thresh: float = 0.05
    nms_iou: float = 0.3
    vote_iou: float = 0.5
    max_detections: int = 750

    def __post_init__(self):
        if not self.pyramid_short_sides:
            raise ValueError("pyramid must not be empty")
        for name in ("score_thresh", "nms_iou", "vote_iou"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float


def _face_probs(cls_logits: np.ndarray) -> np.ndarray:
    z = cls_logits.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e[:, 1] / e.sum(axis=1)


def _detect_arrays(model, image, scale: float, cfg: InferConfig, anchor_cfg: AnchorConfig):
    """One forward pass at one scale; boxes returned in original coordinates."""
    h, w = image.shape[:2]
    out_h, out_w = scaled_size(h, w, scale)
    scaled = resize_image(image, out_h, out_w)
    padded = pad_to_multiple(scaled, 16)
    grid = generate_anchors(padded.shape[0], padded.shape[1], anchor_cfg)
    out = model.forward(to_nchw(padded, dtype=model.dtype))
    probs = _face_probs(out.cls)
    keep = np.flatnonzero(probs >= cfg.score_thresh)
    if keep.size == 0:
        return np.zeros((0, 4)), np.zeros(0)
    boxes = decode_arrays(grid.boxes_xyxy[keep], out.reg[keep])
    boxes = clip_boxes_array(boxes, out_h, out_w)
    boxes[:, 0::2] *= w / out_w
    boxes[:, 1::2] *= h / out_h
    boxes = clip_boxes_array(boxes, h, w)
    return boxes, probs[keep]


def detect_single_scale(model, image, scale: float, cfg: InferConfig = InferConfig(),
                        anchor_cfg: AnchorConfig = AnchorConfig()) -> list[Detection]:
    boxes, scores = _detect_arrays(model, image, scale, cfg, anchor_cfg)
    return [Detection(Box(*b), float(s)) for b, s in zip(boxes, scores)]


def nms(dets: list, iou_thresh: float) -> list[int]:
    """Greedy NMS; keeps the highest score, drops overlaps above iou_thresh.

    Accepts a list of Detection (or (Box, score) pairs); returns kept indices
    in selection order. Score ties break toward the lower index.
    """
    boxes, scores = _to_arrays(dets)
    return _nms_arrays(boxes, scores, iou_thresh).tolist()


def _to_arrays(dets):
    boxes = np.zeros((len(dets), 4))
    scores = np.zeros(len(dets))
    for i, d in enumerate(dets):
        box, score = (d.box, d.score) if isinstance(d, Detection) else d
        boxes[i] = box.as_array() if isinstance(box, Box) else np.asarray(box, dtype=np.float64)
        scores[i] = score
    return boxes, scores


def _nms_arrays(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    n = len(scores)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), -scores))
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    kept = []
    while order.size:
        i = order[0]
        kept.append(int(i))
        rest = order[1:]
        if rest.size == 0:
            break
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        union = areas[i] + areas[rest] - inter
        ov = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
        order = rest[ov <= iou_thresh]
    return np.asarray(kept, dtype=np.int64)


def box_voting(kept: Detection, suppressed_pool: list, vote_iou: float) -> Detection:
    """Replace the kept box with the score-weighted mean of its close voters.

    Voters are every pool entry (the kept detection included) whose IoU with
    the kept box is at least vote_iou. The score is left untouched.
    """
    boxes, scores = _to_arrays(suppressed_pool)
    voted = _vote_arrays(kept.box.as_array(), boxes, scores, vote_iou)
    return Detection(Box(*voted), kept.score)


def _vote_arrays(kept_box: np.ndarray, pool_boxes: np.ndarray, pool_scores: np.ndarray,
                 vote_iou: float) -> np.ndarray:
    if len(pool_boxes) == 0:
        return kept_box
    overlaps = iou_matrix(kept_box[None], pool_boxes)[0]
    voters = overlaps >= vote_iou
    if not np.any(voters):
        return kept_box
    weights = pool_scores[voters]
    total = weights.sum()
    if total <= 0:
        return kept_box
    return (pool_boxes[voters] * weights[:, None]).sum(axis=0) / total


def detect(model, image, cfg: InferConfig = InferConfig(),
           anchor_cfg: AnchorConfig = AnchorConfig()) -> list[Detection]:
    """Full test pipeline: pyramid + optional flip, global NMS, voting."""
    h, w = image.shape[:2]
    all_boxes, all_scores = [], []
    flipped = hflip_image(image) if cfg.flip else None
    for short_side in cfg.pyramid_short_sides:
        scale = scale_for_short_side(h, w, short_side, cfg.long_side_cap)
        boxes, scores = _detect_arrays(model, image, scale, cfg, anchor_cfg)
        all_boxes.append(boxes)
        all_scores.append(scores)
        if cfg.flip:
            fboxes, fscores = _detect_arrays(model, flipped, scale, cfg, anchor_cfg)
            all_boxes.append(flip_boxes_array(fboxes, w) if len(fboxes) else fboxes)
            all_scores.append(fscores)
    boxes = np.concatenate(all_boxes, axis=0)
    scores = np.concatenate(all_scores, axis=0)
    kept = _nms_arrays(boxes, scores, cfg.nms_iou)
    voted = np.stack([
        _vote_arrays(boxes[i], boxes, scores, cfg.vote_iou) for i in kept
    ]) if kept.size else np.zeros((0, 4))
    kept_scores = scores[kept]
    order = np.lexsort((kept, -kept_scores))[: cfg.max_detections]
    return [Detection(Box(*voted[i]), float(kept_scores[i])) for i in order]


# -- detection file format ------------------------------------------------------

def write_detections(path, dets_by_image: dict) -> None:
    """Submission-style text: id line, count line, then x y w h score rows."""
    with open(path, "w") as f:
        for image_id, dets in dets_by_image.items():
            f.write(f"{image_id}\n{len(dets)}\n")
            for d in dets:
                b = d.box
                f.write(f"{b.x_min:.6f} {b.y_min:.6f} {b.width:.6f} {b.height:.6f} {d.score:.6f}\n")


def read_detections(path) -> dict:
    dets_by_image = {}
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        image_id = lines[i].strip()
        count = int(lines[i + 1])
        dets = []
        for j in range(count):
            x, y, w, h, score = (float(v) for v in lines[i + 2 + j].split())
            dets.append(Detection(Box(x, y, x + w, y + h), score))
        dets_by_image[image_id] = dets
        i += 2 + count
    return dets_by_image
