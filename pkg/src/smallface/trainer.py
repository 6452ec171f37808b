"""Training orchestration: epoch plans, augmentation, target assignment,
OHEM, losses, WPAS recording, gradient accumulation and checkpoints.

One forward pass sees one augmented image. An optimizer step consumes
itersize passes per worker, gradients averaged over the passes actually
taken (the tail of an epoch can be short). Workers model data-parallel
replicas sequentially: each keeps its own difficulty table and epoch plan,
and their gradients are summed in worker-index order, so a run is a pure
function of (dataset, config, seed).

All randomness is re-derived from (seed, stream, epoch, worker, position),
never from sequential generator state, which is what makes checkpoint
resume bit-identical.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment as aug
from .augment import AugmentConfig
from .datasets import ImageRecord, read_ppm
from .geometry import AnchorConfig, generate_anchors
from .imageops import pad_to_multiple, to_nchw
from .mining import (DifficultyTable, HimConfig, build_epoch_plan, ignored_ratio,
                     record_score, save_ratio_history, wpas)
from .targets import MatchConfig, OhemConfig, assign_targets, ohem_select
from .tensornet import (DetectorModel, ModelConfig, TrainHyper, load_tensors,
                        save_tensors, sgd_momentum_step, softmax_ce_loss,
                        smooth_l1_loss)
from .tensornet.optim import lr_at  # noqa: F401  (re-exported schedule lookup)

log = logging.getLogger(__name__)

STREAM_AUG = 2
FLIP_SUFFIX = "_flip"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    itersize: int = 2
    momentum: float = 0.9
    lr_schedule: tuple[tuple[int, float], ...] = ((46000, 0.004), (14000, 0.0004))
    reg_loss_weight: float = 1.0
    init: str = "gaussian"  # or "he"
    init_std: float = 0.01
    flip_double: bool = True
    num_workers: int = 1
    checkpoint_every: int = 1


@dataclass
class TrainState:
    model: DetectorModel
    velocity: dict
    tables: list[DifficultyTable]
    iteration: int = 0
    epoch: int = 0
    metric_rows: list = field(default_factory=list)   # (iter, epoch, cls, reg, mean_wpas)
    epoch_rows: list = field(default_factory=list)    # (epoch, ignored_ratio, num_trained)

    @property
    def total_visits(self) -> int:
        return sum(int(r[2]) for r in self.epoch_rows)


def doubled_entries(records: list[ImageRecord], flip_double: bool):
    """(entry_id, record, flipped) triples; flipped copies are distinct images."""
    entries = [(rec.id, rec, False) for rec in records]
    if flip_double:
        entries += [(rec.id + FLIP_SUFFIX, rec, True) for rec in records]
    return entries


class Trainer:
    def __init__(self, records: list[ImageRecord], out_dir,
                 seed: int = 0,
                 anchor_cfg: AnchorConfig = AnchorConfig(),
                 match_cfg: MatchConfig = MatchConfig(),
                 ohem_cfg: OhemConfig = OhemConfig(),
                 him_cfg: HimConfig = HimConfig(),
                 aug_cfg: AugmentConfig = AugmentConfig(),
                 model_cfg: ModelConfig = ModelConfig(),
                 train_cfg: TrainConfig = TrainConfig()):
        if anchor_cfg.stride != model_cfg.stride:
            raise ValueError(f"anchor stride {anchor_cfg.stride} != model stride {model_cfg.stride}")
        if tuple(anchor_cfg.sizes) != tuple(model_cfg.anchor_sizes):
            raise ValueError("anchor sizes and model branches disagree: "
                             f"{anchor_cfg.sizes} vs {model_cfg.anchor_sizes}")
        self.records = records
        self.out_dir = Path(out_dir)
        self.seed = int(seed)
        self.anchor_cfg = anchor_cfg
        self.match_cfg = match_cfg
        self.ohem_cfg = ohem_cfg
        self.him_cfg = him_cfg
        self.aug_cfg = aug_cfg
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.hyper = TrainHyper(lr_schedule=train_cfg.lr_schedule,
                                momentum=train_cfg.momentum,
                                itersize=train_cfg.itersize,
                                init_std=train_cfg.init_std)
        self.entries = doubled_entries(records, train_cfg.flip_double)
        self.entry_by_id = {eid: (rec, flipped) for eid, rec, flipped in self.entries}
        self.all_ids = [eid for eid, _, _ in self.entries]
        self._grids = {}
        self._image_cache = {}

        model = DetectorModel(model_cfg, seed=seed, init=train_cfg.init,
                              init_std=train_cfg.init_std)
        velocity = {name: np.zeros_like(p.value) for name, p in model.params.items()}
        tables = [DifficultyTable(self.all_ids) for _ in range(train_cfg.num_workers)]
        self.state = TrainState(model=model, velocity=velocity, tables=tables)

    # -- plumbing ------------------------------------------------------------

    def _grid(self, h, w):
        key = (h, w)
        if key not in self._grids:
            self._grids[key] = generate_anchors(h, w, self.anchor_cfg)
        return self._grids[key]

    def _image(self, record: ImageRecord):
        if record.id not in self._image_cache:
            self._image_cache[record.id] = read_ppm(record.path)
        return self._image_cache[record.id]

    def _augmented_instance(self, entry_id: str, epoch: int, worker: int, position: int):
        record, flipped = self.entry_by_id[entry_id]
        image = self._image(record)
        gts = [(gt.box, gt.ignored) for gt in record.gts]
        if flipped:
            image, gts = aug.hflip(image, gts)
        rng = np.random.default_rng([self.seed, STREAM_AUG, epoch, worker, position])
        image, gts = aug.resize_for_training(image, gts, self.aug_cfg, rng)
        image, gts = aug.random_crop(image, gts, self.aug_cfg, rng)
        image = aug.photometric_distort(image, self.aug_cfg, rng)
        return image, gts

    # -- core steps ----------------------------------------------------------

    def train_iteration(self, entry_id: str, image, gts, worker: int):
        """Forward, target assignment, WPAS recording, losses, backward.

        Gradients accumulate into the model; the caller decides when to step.
        Returns (cls_loss, reg_loss, wpas_score) or None if the instance is
        too small to carry any anchor.
        """
        padded = pad_to_multiple(image, 16)
        if min(padded.shape[:2]) < self.anchor_cfg.stride:
            log.warning("skipping %s: %sx%s leaves no anchors",
                        entry_id, padded.shape[0], padded.shape[1])
            return None
        grid = self._grid(padded.shape[0], padded.shape[1])
        out = self.state.model.forward(to_nchw(padded), want_cache=True)
        labeled = assign_targets(grid, gts, self.match_cfg)

        cls64 = out.cls.astype(np.float64)
        shift = cls64.max(axis=1, keepdims=True)
        expz = np.exp(cls64 - shift)
        probs = expz[:, 1] / expz.sum(axis=1)

        positives = np.flatnonzero(labeled.labels == 1)
        score = wpas(cls64[:, 1], cls64[:, 0], positives)
        record_score(self.state.tables[worker], entry_id, score, self.him_cfg)

        selection = ohem_select(labeled.labels, probs, self.ohem_cfg)
        cls_loss, dcls = softmax_ce_loss(out.cls, labeled.labels, selection)
        reg_loss, dreg = smooth_l1_loss(out.reg, labeled.reg_targets, labeled.reg_mask)
        self.state.model.backward(dcls, self.cfg.reg_loss_weight * dreg, out.cache)
        return cls_loss, reg_loss, score

    def train_epoch(self, epoch: int):
        state = self.state
        plans = [
            build_epoch_plan(self.all_ids, state.tables[w], self.him_cfg, epoch, w, self.seed)
            for w in range(self.cfg.num_workers)
        ]
        ratio = float(np.mean([ignored_ratio(p, self.all_ids) for p in plans]))
        visits = sum(len(p) for p in plans)
        if visits == 0:
            log.warning("epoch %d: empty training plan, skipping", epoch)
            state.epoch_rows.append((epoch, ratio, 0))
            state.epoch = epoch + 1
            return

        cursors = [0] * self.cfg.num_workers
        while any(c < len(p) for c, p in zip(cursors, plans)):
            state.model.zero_grads()
            batch_stats = []
            for w, plan in enumerate(plans):
                for _ in range(self.cfg.itersize):
                    if cursors[w] >= len(plan):
                        break
                    entry_id = plan.image_ids[cursors[w]]
                    image, gts = self._augmented_instance(entry_id, epoch, w, cursors[w])
                    cursors[w] += 1
                    result = self.train_iteration(entry_id, image, gts, w)
                    if result is not None:
                        batch_stats.append(result)
            if not batch_stats:
                continue
            n = len(batch_stats)
            for p in state.model.params.values():
                p.grad /= n
            sgd_momentum_step(state.model.params, state.velocity, self.hyper, state.iteration)
            cls_mean = float(np.mean([s[0] for s in batch_stats]))
            reg_mean = float(np.mean([s[1] for s in batch_stats]))
            wpas_mean = float(np.mean([s[2] for s in batch_stats]))
            state.metric_rows.append((state.iteration, epoch, cls_mean, reg_mean, wpas_mean))
            state.iteration += 1

        state.epoch_rows.append((epoch, ratio, visits))
        state.epoch = epoch + 1

    # -- checkpoints -----------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        tensors = {}
        for name, p in self.state.model.params.items():
            tensors[f"param/{name}"] = p.value
        for name, v in self.state.velocity.items():
            tensors[f"vel/{name}"] = v
        meta = {
            "iteration": self.state.iteration,
            "epoch": self.state.epoch,
            "seed": self.seed,
            "model_cfg": {
                "backbone_widths": list(self.model_cfg.backbone_widths),
                "reduce_width": self.model_cfg.reduce_width,
                "det_width": self.model_cfg.det_width,
                "head_width": self.model_cfg.head_width,
                "anchor_sizes": list(self.model_cfg.anchor_sizes),
                "in_channels": self.model_cfg.in_channels,
            },
            "anchor_stride": self.anchor_cfg.stride,
            "tables": [
                {eid: [e.last_wpas, int(e.is_easy)] for eid, e in t.items()}
                for t in self.state.tables
            ],
            "metric_rows": [list(r) for r in self.state.metric_rows],
            "epoch_rows": [list(r) for r in self.state.epoch_rows],
        }
        save_tensors(path, tensors, meta)

    def load_checkpoint(self, path) -> None:
        tensors, meta = load_tensors(path)
        state = self.state
        state.model.load_state_arrays(
            {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")})
        for name in state.velocity:
            state.velocity[name] = tensors[f"vel/{name}"].astype(state.model.dtype)
        state.iteration = int(meta["iteration"])
        state.epoch = int(meta["epoch"])
        state.metric_rows = [tuple(r) for r in meta["metric_rows"]]
        state.epoch_rows = [tuple(r) for r in meta["epoch_rows"]]
        for table, saved in zip(state.tables, meta["tables"]):
            for eid, (score, easy) in saved.items():
                entry = table.entry(eid)
                entry.last_wpas = score
                entry.is_easy = bool(easy)

    # -- logs -------------------------------------------------------------------

    def write_logs(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "metrics.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "epoch", "cls_loss", "reg_loss", "mean_wpas"])
            for it, ep, c, r, s in self.state.metric_rows:
                w.writerow([it, ep, repr(float(c)), repr(float(r)), repr(float(s))])
        with open(self.out_dir / "epochs.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "ignored_ratio", "num_trained"])
            for ep, ratio, n in self.state.epoch_rows:
                w.writerow([ep, repr(float(ratio)), n])
        save_ratio_history(self.out_dir / "ratios.csv",
                           [(ep, ratio) for ep, ratio, _ in self.state.epoch_rows])

    def run(self, resume_from=None) -> TrainState:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_dir = self.out_dir / "checkpoints"
        table_dir = self.out_dir / "difficulty"
        ckpt_dir.mkdir(exist_ok=True)
        table_dir.mkdir(exist_ok=True)
        if resume_from is not None:
            self.load_checkpoint(resume_from)
            log.info("resumed from %s at epoch %d", resume_from, self.state.epoch)
        t0 = time.perf_counter()
        for epoch in range(self.state.epoch, self.cfg.epochs):
            self.train_epoch(epoch)
            _, ratio, visits = self.state.epoch_rows[-1]
            log.info("epoch %d: %d visits, ignored ratio %.3f, %.1fs elapsed",
                     epoch, visits, ratio, time.perf_counter() - t0)
            if (epoch + 1) % self.cfg.checkpoint_every == 0 or epoch + 1 == self.cfg.epochs:
                self.save_checkpoint(ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt")
                for w, table in enumerate(self.state.tables):
                    suffix = f"_w{w}" if self.cfg.num_workers > 1 else ""
                    table.save_csv(table_dir / f"epoch_{epoch + 1:04d}{suffix}.csv")
            self.write_logs()
        self.save_checkpoint(self.out_dir / "final.ckpt")
        self.write_logs()
        return self.state


def load_model_from_checkpoint(path) -> tuple[DetectorModel, AnchorConfig]:
    """Rebuild a trained detector (and its anchor layout) from a checkpoint."""
    tensors, meta = load_tensors(path)
    mc = meta["model_cfg"]
    model_cfg = ModelConfig(
        backbone_widths=tuple(mc["backbone_widths"]),
        reduce_width=int(mc["reduce_width"]),
        det_width=int(mc["det_width"]),
        head_width=int(mc["head_width"]),
        anchor_sizes=tuple(mc["anchor_sizes"]),
        in_channels=int(mc["in_channels"]),
    )
    model = DetectorModel(model_cfg, seed=0)
    model.load_state_arrays(
        {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")})
    anchor_cfg = AnchorConfig(stride=int(meta["anchor_stride"]),
                              sizes=tuple(mc["anchor_sizes"]))
    return model, anchor_cfg
