"""Worst positive anchor score and the hard-image epoch sampler.

Every training image carries a difficulty mark. Images start hard; after a
visit the image is re-scored with the worst (minimum) softmax face
probability over its positive anchors, and becomes easy once that score
exceeds the threshold. When building the next epoch's list, the full id list
is shuffled and each easy image is then dropped independently with
probability drop_prob; hard images are always kept. Drop decisions are
re-drawn every epoch, so a dropped image can return later.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# Sub-stream tags so every RNG in a run derives from one root seed.
STREAM_PLAN = 1


@dataclass(frozen=True)
class HimConfig:
    drop_prob: float = 0.7
    easy_threshold: float = 0.85
    enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.drop_prob <= 1.0):
            raise ValueError(f"drop_prob must be in [0, 1], got {self.drop_prob}")
        if not (0.0 <= self.easy_threshold <= 1.0):
            raise ValueError(f"easy_threshold must be in [0, 1], got {self.easy_threshold}")


@dataclass
class ScoreEntry:
    last_wpas: float | None = None
    is_easy: bool = False


class DifficultyTable:
    """Per-image last WPAS and easy/hard mark. Unscored images are hard."""

    def __init__(self, image_ids):
        self._entries: dict[str, ScoreEntry] = {str(i): ScoreEntry() for i in image_ids}

    def __contains__(self, image_id) -> bool:
        return str(image_id) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> list[str]:
        return list(self._entries)

    def entry(self, image_id) -> ScoreEntry:
        return self._entries[str(image_id)]

    def is_easy(self, image_id) -> bool:
        return self._entries[str(image_id)].is_easy

    def items(self):
        return self._entries.items()

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["image_id", "last_wpas", "is_easy"])
            for image_id, e in self._entries.items():
                score = "" if e.last_wpas is None else repr(e.last_wpas)
                w.writerow([image_id, score, int(e.is_easy)])

    @classmethod
    def load_csv(cls, path) -> "DifficultyTable":
        table = cls([])
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != ["image_id", "last_wpas", "is_easy"]:
                raise ValueError(f"{path}: unexpected difficulty table header {header}")
            for row in reader:
                image_id, score, easy = row
                table._entries[image_id] = ScoreEntry(
                    last_wpas=None if score == "" else float(score),
                    is_easy=bool(int(easy)),
                )
        return table


@dataclass
class EpochPlan:
    image_ids: list[str]
    epoch: int
    worker: int
    total_images: int = field(default=0)

    def __len__(self) -> int:
        return len(self.image_ids)

    def __iter__(self):
        return iter(self.image_ids)


def wpas(face_logit: np.ndarray, bg_logit: np.ndarray, positive_set) -> float:
    """Minimum softmax face probability over the positive anchors.

    Computed with the max logit subtracted so +-1000 logits do not overflow.
    An empty positive set scores 1.0: with no positive anchor to supervise,
    the image cannot look any easier.
    """
    positive_set = np.asarray(positive_set, dtype=np.int64)
    if positive_set.size == 0:
        return 1.0
    l1 = np.asarray(face_logit, dtype=np.float64)[positive_set]
    l0 = np.asarray(bg_logit, dtype=np.float64)[positive_set]
    m = np.maximum(l1, l0)
    e1 = np.exp(l1 - m)
    e0 = np.exp(l0 - m)
    return float(np.min(e1 / (e1 + e0)))


def record_score(table: DifficultyTable, image_id, score: float, cfg: HimConfig) -> DifficultyTable:
    """Store a fresh WPAS for an image and refresh its easy mark."""
    if not (0.0 <= score <= 1.0):
        raise ValueError(f"score must be in [0, 1], got {score}")
    entry = table.entry(image_id)  # KeyError on unknown id
    entry.last_wpas = float(score)
    entry.is_easy = score > cfg.easy_threshold
    return table


def build_epoch_plan(
    all_ids,
    table: DifficultyTable,
    cfg: HimConfig,
    epoch: int,
    worker: int,
    rng_seed: int,
) -> EpochPlan:
    """Shuffle the full id list, then drop each easy image with prob drop_prob.

    The RNG is derived from (rng_seed, epoch, worker), so the plan is
    reproducible and every worker draws an independent stream.
    """
    all_ids = [str(i) for i in all_ids]
    rng = np.random.default_rng([int(rng_seed), STREAM_PLAN, int(epoch), int(worker)])
    order = rng.permutation(len(all_ids))
    shuffled = [all_ids[i] for i in order]
    if not cfg.enabled:
        return EpochPlan(shuffled, epoch, worker, total_images=len(all_ids))
    kept = []
    for image_id in shuffled:
        if table.is_easy(image_id) and rng.random() < cfg.drop_prob:
            continue
        kept.append(image_id)
    return EpochPlan(kept, epoch, worker, total_images=len(all_ids))


def ignored_ratio(plan: EpochPlan, all_ids) -> float:
    """Fraction of the dataset left out of this epoch's plan."""
    total = len(list(all_ids))
    if total == 0:
        return 0.0
    return (total - len(plan)) / total


def save_ratio_history(path, history: list[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "ratio"])
        for epoch, ratio in history:
            w.writerow([epoch, repr(float(ratio))])
