"""Per-anchor classification labels, regression targets and OHEM selection.

Labeling rules for one image:
  * +1  if the best IoU against a non-ignored ground-truth box exceeds pos_iou
  *  0  if every ground-truth IoU is below neg_iou
  * -1  otherwise (the in-between band, plus anchors whose best overlap is an
        ignored box with IoU above neg_iou)

There is no best-anchor fallback: a face that no anchor covers above pos_iou
simply produces no positive labels. Regression targets are decoupled from the
labels and cover every anchor with IoU above reg_iou against a non-ignored
box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import AnchorGrid, Box, encode_arrays, iou_matrix


@dataclass(frozen=True)
class MatchConfig:
    pos_iou: float = 0.5
    neg_iou: float = 0.3
    reg_iou: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.neg_iou <= self.pos_iou <= 1.0):
            raise ValueError(f"need 0 <= neg_iou <= pos_iou <= 1, got {self}")
        if self.reg_iou > self.pos_iou:
            raise ValueError(f"need reg_iou <= pos_iou, got {self}")


@dataclass(frozen=True)
class OhemConfig:
    batch_anchors: int = 256
    max_pos: int = 64

    def __post_init__(self):
        if not (0 < self.max_pos <= self.batch_anchors):
            raise ValueError(f"need 0 < max_pos <= batch_anchors, got {self}")


@dataclass
class LabeledAnchorSet:
    labels: np.ndarray       # (A,) int8 in {+1, 0, -1}
    reg_mask: np.ndarray     # (A,) bool
    reg_targets: np.ndarray  # (A, 4) float64, defined where reg_mask
    matched_gt: np.ndarray   # (A,) int64, gt index where reg_mask else -1

    @property
    def num_positive(self) -> int:
        return int(np.sum(self.labels == 1))


@dataclass
class OhemSelection:
    selected_pos: np.ndarray  # (P,) int64
    selected_neg: np.ndarray  # (N,) int64

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.selected_pos, self.selected_neg])

    @property
    def size(self) -> int:
        return len(self.selected_pos) + len(self.selected_neg)


def assign_targets(
    grid: AnchorGrid,
    gts: list[tuple[Box, bool]],
    cfg: MatchConfig = MatchConfig(),
) -> LabeledAnchorSet:
    """Label every anchor in the grid against the (box, ignored) ground truths."""
    num_anchors = grid.num_anchors
    labels = np.zeros(num_anchors, dtype=np.int8)
    reg_mask = np.zeros(num_anchors, dtype=bool)
    reg_targets = np.zeros((num_anchors, 4), dtype=np.float64)
    matched_gt = np.full(num_anchors, -1, dtype=np.int64)

    if not gts:
        return LabeledAnchorSet(labels, reg_mask, reg_targets, matched_gt)

    for box, _ in gts:
        if box.area <= 0:
            raise ValueError(f"ground-truth boxes must have positive area, got {box}")

    gt_xyxy = np.stack([box.as_array() for box, _ in gts])
    ignored = np.array([flag for _, flag in gts], dtype=bool)
    overlaps = iou_matrix(grid.boxes_xyxy, gt_xyxy)  # (A, G)

    # Best match over all boxes, ties resolved toward the lower gt index
    # (argmax returns the first maximum).
    best_all = np.argmax(overlaps, axis=1)
    best_all_iou = overlaps[np.arange(num_anchors), best_all]
    suppressed = ignored[best_all] & (best_all_iou > cfg.neg_iou)

    valid_idx = np.flatnonzero(~ignored)
    if valid_idx.size:
        overlaps_valid = overlaps[:, valid_idx]
        best_valid_local = np.argmax(overlaps_valid, axis=1)
        best_valid_iou = overlaps_valid[np.arange(num_anchors), best_valid_local]
        best_valid = valid_idx[best_valid_local]
    else:
        best_valid_iou = np.zeros(num_anchors)
        best_valid = np.zeros(num_anchors, dtype=np.int64)

    labels[best_valid_iou > cfg.pos_iou] = 1
    labels[(best_valid_iou >= cfg.neg_iou) & (labels != 1)] = -1
    labels[suppressed] = -1

    reg_mask = best_valid_iou > cfg.reg_iou
    if np.any(reg_mask):
        rows = np.flatnonzero(reg_mask)
        reg_targets[rows] = encode_arrays(grid.boxes_xyxy[rows], gt_xyxy[best_valid[rows]])
        matched_gt[rows] = best_valid[rows]
    return LabeledAnchorSet(labels, reg_mask, reg_targets, matched_gt)


def ohem_select(
    labels: np.ndarray,
    face_prob: np.ndarray,
    cfg: OhemConfig = OhemConfig(),
) -> OhemSelection:
    """Pick the hardest anchors for the classification loss.

    Positives (label +1) with the lowest face probability are kept, at most
    max_pos of them; the remaining batch_anchors slots are filled with the
    label-0 anchors of highest face probability. Probability ties break
    toward the lower anchor index.
    """
    labels = np.asarray(labels)
    face_prob = np.asarray(face_prob, dtype=np.float64)
    if labels.shape != face_prob.shape:
        raise ValueError(f"labels {labels.shape} and face_prob {face_prob.shape} differ")

    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)

    # stable sort keeps index order among equal probabilities
    pos_order = pos_idx[np.argsort(face_prob[pos_idx], kind="stable")]
    selected_pos = pos_order[: cfg.max_pos]

    budget = cfg.batch_anchors - len(selected_pos)
    neg_order = neg_idx[np.argsort(-face_prob[neg_idx], kind="stable")]
    selected_neg = neg_order[:budget]
    return OhemSelection(selected_pos=selected_pos.astype(np.int64),
                         selected_neg=selected_neg.astype(np.int64))
