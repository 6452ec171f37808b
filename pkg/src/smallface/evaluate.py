"""Detection-to-GT matching, PR curves and average precision with nested
difficulty subsets.

Subsets select ground truth by box height; hard is the superset (every face
at least hard_min_height tall), medium and easy are nested inside it. A
detection whose only above-threshold overlap is an out-of-subset or ignored
box is neither a true nor a false positive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box, iou

TP, FP, IGNORE = 1, 0, -1


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.5
    easy_min_height: float = 50.0
    medium_min_height: float = 25.0
    hard_min_height: float = 10.0

    def __post_init__(self):
        if not (self.hard_min_height <= self.medium_min_height <= self.easy_min_height):
            raise ValueError(f"subsets must be nested (hard ⊆ medium ⊆ easy cutoffs), got {self}")

    def min_height(self, subset: str | None) -> float:
        if subset is None:
            return 0.0
        table = {"easy": self.easy_min_height, "medium": self.medium_min_height,
                 "hard": self.hard_min_height}
        if subset not in table:
            raise ValueError(f"unknown subset {subset!r}")
        return table[subset]

    @property
    def subsets(self) -> tuple[str, ...]:
        return ("easy", "medium", "hard")


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in zip(self.thresholds, self.precision, self.recall):
                w.writerow([repr(float(t)), repr(float(p)), repr(float(r))])


def _in_subset(gt_box: Box, ignored: bool, min_height: float) -> bool:
    return (not ignored) and gt_box.height >= min_height


def match_detections(dets, gts, subset: str | None, cfg: EvalConfig = EvalConfig()):
    """Greedy matching in score order.

    dets: list of (Box, score); gts: list of (Box, ignored).
    Returns (per-detection flags in the ORIGINAL det order, per-GT matched).
    A detection is TP against the unmatched in-subset GT of highest IoU at or
    above iou_thresh (ties to the lower GT index); failing that, it is
    ignored if any out-of-subset or ignored GT overlaps at or above the
    threshold; otherwise FP.
    """
    min_h = cfg.min_height(subset)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    flags = np.zeros(len(dets), dtype=np.int64)
    matched = np.zeros(len(gts), dtype=bool)
    in_sub = [_in_subset(b, ign, min_h) for b, ign in gts]

    for di in order:
        dbox = dets[di][0]
        best_gt, best_iou = -1, cfg.iou_thresh
        ignore_hit = False
        for gi, (gbox, _) in enumerate(gts):
            ov = iou(dbox, gbox)
            if ov < cfg.iou_thresh:
                continue
            if in_sub[gi] and not matched[gi]:
                if ov > best_iou or (ov == best_iou and best_gt == -1):
                    best_gt, best_iou = gi, ov
            elif not in_sub[gi]:
                ignore_hit = True
        if best_gt >= 0:
            flags[di] = TP
            matched[best_gt] = True
        elif ignore_hit:
            flags[di] = IGNORE
        else:
            flags[di] = FP
    return flags, matched


def average_precision(tp_fp_sequence, num_gt: int) -> float:
    """All-points interpolated AP over a score-ordered TP/FP sequence.

    num_gt == 0 has no defined recall; reported as NaN so aggregates can
    skip it.
    """
    if num_gt == 0:
        return math.nan
    seq = np.asarray(tp_fp_sequence, dtype=np.int64)
    if seq.size == 0:
        return 0.0
    tp_cum = np.cumsum(seq == TP)
    fp_cum = np.cumsum(seq == FP)
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    # integrate recall increments against the running max of future precision
    p_interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, p_interp):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def _ranked_flags(per_image):
    """Merge per-image (scores, flags) into one global score-ordered list."""
    rows = []
    for img_idx, (scores, flags) in enumerate(per_image):
        for j, (s, fl) in enumerate(zip(scores, flags)):
            if fl != IGNORE:
                rows.append((-float(s), img_idx, j, int(fl)))
    rows.sort()
    return [fl for _, _, _, fl in rows], [-s for s, _, _, _ in rows]


def evaluate_detections(dets_by_image: dict, gts_by_image: dict, subset: str | None,
                        cfg: EvalConfig = EvalConfig()) -> PRCurve:
    """Dataset-level PR curve and AP for one subset.

    dets_by_image: id -> list of (Box, score); gts_by_image: id -> list of
    (Box, ignored). Images present only in the GT map count toward recall.
    """
    min_h = cfg.min_height(subset)
    num_gt = 0
    per_image = []
    for image_id, gts in gts_by_image.items():
        num_gt += sum(_in_subset(b, ign, min_h) for b, ign in gts)
        dets = dets_by_image.get(image_id, [])
        flags, _ = match_detections(dets, gts, subset, cfg)
        per_image.append(([s for _, s in dets], flags))
    flags, scores = _ranked_flags(per_image)
    seq = np.asarray(flags, dtype=np.int64)
    ap = average_precision(seq, num_gt)
    tp_cum = np.cumsum(seq == TP) if seq.size else np.zeros(0, dtype=np.int64)
    fp_cum = np.cumsum(seq == FP) if seq.size else np.zeros(0, dtype=np.int64)
    recall = tp_cum / max(num_gt, 1)
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    return PRCurve(thresholds=np.asarray(scores, dtype=np.float64),
                   precision=precision.astype(np.float64),
                   recall=recall.astype(np.float64), ap=ap)


def evaluate_all_subsets(dets_by_image, gts_by_image, cfg: EvalConfig = EvalConfig()):
    return {s: evaluate_detections(dets_by_image, gts_by_image, s, cfg) for s in cfg.subsets}


def per_image_ap(dets, gts, cfg: EvalConfig = EvalConfig(), subset: str | None = None) -> float:
    """AP restricted to a single image; NaN when it has no countable GT."""
    min_h = cfg.min_height(subset)
    num_gt = sum(_in_subset(b, ign, min_h) for b, ign in gts)
    if num_gt == 0:
        return math.nan
    flags, _ = match_detections(dets, gts, subset, cfg)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    seq = [flags[i] for i in order if flags[i] != IGNORE]
    return average_precision(seq, num_gt)


def save_summary_csv(path, curves: dict, num_gt_by_subset: dict) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["subset", "ap", "num_gt"])
        for subset, curve in curves.items():
            w.writerow([subset, repr(float(curve.ap)), num_gt_by_subset[subset]])


def count_gt(gts_by_image, subset: str | None, cfg: EvalConfig = EvalConfig()) -> int:
    min_h = cfg.min_height(subset)
    return sum(
        _in_subset(b, ign, min_h)
        for gts in gts_by_image.values()
        for b, ign in gts
    )
