"""Command-line entry point: gen-data, train, infer, eval, diagnose.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, echo_config, load_config
from .datasets import SynthConfig, generate_synthetic, load_dataset, read_ppm
from .evaluate import count_gt, evaluate_all_subsets, per_image_ap
from .inference import detect, read_detections, write_detections
from .mining import HimConfig
from .trainer import Trainer, load_model_from_checkpoint

log = logging.getLogger(__name__)


def _dataclass_replace(obj, **kwargs):
    import dataclasses
    return dataclasses.replace(obj, **kwargs)


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    synth = cfg.synth
    if args.seed is not None:
        synth = _dataclass_replace(synth, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(_dataclass_replace(cfg, synth=synth), out / "config.yaml")
    records = generate_synthetic(synth, args.count, out)
    print(out / "manifest.csv")
    log.info("wrote %d images to %s", len(records), out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    him = cfg.him
    if args.no_him:
        him = HimConfig(drop_prob=him.drop_prob, easy_threshold=him.easy_threshold,
                        enabled=False)
    records = load_dataset(args.data)
    if not records:
        raise ValueError(f"no training images found under {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(_dataclass_replace(cfg, him=him), out / "config.yaml")
    trainer = Trainer(
        records, out, seed=cfg.seed, anchor_cfg=cfg.anchors, match_cfg=cfg.match,
        ohem_cfg=cfg.ohem, him_cfg=him, aug_cfg=cfg.augment, model_cfg=cfg.model,
        train_cfg=cfg.train,
    )
    trainer.run(resume_from=args.resume)
    print(out / "final.ckpt")
    return 0


def cmd_infer(args) -> int:
    cfg = load_config(args.config)
    model, anchor_cfg = load_model_from_checkpoint(args.checkpoint)
    records = load_dataset(args.images)
    dets_by_image = {}
    for rec in records:
        image = read_ppm(rec.path)
        dets_by_image[rec.id] = detect(model, image, cfg.infer, anchor_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections(out, dets_by_image)
    print(out)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    dets_by_image = {
        image_id: [(d.box, d.score) for d in dets]
        for image_id, dets in read_detections(args.dets).items()
    }
    records = load_dataset(args.gt)
    gts_by_image = {rec.id: [(g.box, g.ignored) for g in rec.gts] for rec in records}
    curves = evaluate_all_subsets(dets_by_image, gts_by_image, cfg.eval)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["subset", "ap", "num_gt"])
        for subset, curve in curves.items():
            n = count_gt(gts_by_image, subset, cfg.eval)
            w.writerow([subset, repr(float(curve.ap)), n])
            print(f"{subset}: AP {curve.ap:.4f} over {n} boxes")
    for subset, curve in curves.items():
        curve.save_csv(out / f"pr_{subset}.csv")
    return 0


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    model, anchor_cfg = load_model_from_checkpoint(args.checkpoint)
    records = load_dataset(args.data)
    rows = []
    for rec in records:
        image = read_ppm(rec.path)
        dets = [(d.box, d.score) for d in detect(model, image, cfg.infer, anchor_cfg)]
        gts = [(g.box, g.ignored) for g in rec.gts]
        rows.append((rec.id, per_image_ap(dets, gts, cfg.eval)))
    rows.sort(key=lambda r: (math.inf if math.isnan(r[1]) else r[1], r[0]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "per_image_ap.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "ap"])
        for image_id, ap in rows:
            w.writerow([image_id, "nan" if math.isnan(ap) else repr(float(ap))])
    print(out / "per_image_ap.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smallface",
                                     description="small-face detector workflows")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-him", action="store_true", help="disable hard image mining")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run detection over a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a detection file against ground truth")
    p.add_argument("--config", default=None)
    p.add_argument("--dets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="per-image AP over a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
