"""Command-line entry point: ``gancoloc {train,localize,evaluate,visualize}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint
from .config import ExperimentConfig, GanConfig, parse_key_values
from .data import MANIFEST, build_dataset, load_manifest_split, read_manifest, to_float, _load_rgb
from .evaluation import evaluate_checkpoint, score_boxes
from .exceptions import ConfigError, DataError, NumericalError
from .localization import localize_full, read_predictions, write_predictions
from .models import sample_latent
from .saliency import cam_batch
from .training import select_peak_checkpoint, train

logger = logging.getLogger("gancoloc")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
RESOLVED_CONFIG = "config.txt"


# --- configuration --------------------------------------------------------

def load_experiment(path: Optional[str], overrides: Sequence[str] = (), **flags) -> ExperimentConfig:
    """Config file, then ``--set key=value`` overrides, then dedicated flags."""
    values = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_key_values(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for key, value in flags.items():
        if value is not None:
            values[key] = str(value)
    return ExperimentConfig.from_mapping(values)


def resolved_text(config: ExperimentConfig) -> str:
    """Every key with defaults and variant-derived values filled in."""
    gan = config.gan_config()
    full = config.replace(critic_steps=gan.critic_steps, spectral_norm=gan.spectral_norm)
    return full.to_text()


def write_resolved(config: ExperimentConfig, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_CONFIG)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(resolved_text(config))
    return path


def _experiment_from_checkpoint(gan: GanConfig, **extra) -> ExperimentConfig:
    values = gan.to_dict()
    values.update({k: v for k, v in extra.items() if v is not None})
    return ExperimentConfig(**values)


# --- image collection -----------------------------------------------------

def _image_entries(directory: str) -> List[Tuple[str, str, Optional[tuple]]]:
    """(image_id, path, box) sorted by id, from a manifest or a plain directory."""
    if os.path.isfile(directory) and os.path.basename(directory) == MANIFEST:
        directory = os.path.dirname(directory)
    manifest = os.path.join(directory, MANIFEST)
    if os.path.isfile(manifest):
        entries = [(e.image_id, e.path, e.box) for e in read_manifest(manifest)]
    elif os.path.isdir(directory):
        names = [f for f in os.listdir(directory) if f.lower().endswith((".png", ".jpg", ".jpeg"))]
        entries = [(os.path.splitext(f)[0], os.path.join(directory, f), None) for f in names]
    else:
        raise DataError(f"image directory {directory!r} does not exist")
    if not entries:
        raise DataError(f"no images in {directory!r}")
    return sorted(entries)


def _read_images(entries, size: int, skip_unreadable: bool):
    ids, pixels, boxes = [], [], []
    for image_id, path, box in entries:
        try:
            arr = _load_rgb(path)
        except DataError as exc:
            if not skip_unreadable:
                raise
            logger.warning("skipping %s: %s", image_id, exc)
            continue
        if arr.shape[:2] != (size, size):
            raise DataError(f"{path}: image is {arr.shape[1]}x{arr.shape[0]} but the checkpoint "
                            f"expects {size}x{size}")
        ids.append(image_id)
        pixels.append(arr)
        boxes.append(box)
    images = to_float(np.stack(pixels)) if pixels else np.zeros((0, size, size, 3), np.float32)
    return ids, images, boxes


# --- subcommands ----------------------------------------------------------

def cmd_train(args) -> int:
    config = load_experiment(args.config, args.set, seed=args.seed, dataset=args.dataset,
                             root=args.root, out=args.out, ratio=args.ratio)
    dataset = build_dataset(config.dataset, config.root, size=config.input_size,
                            synthetic_train=config.synthetic_train, synthetic_test=config.synthetic_test,
                            synthetic_square=config.synthetic_square, seed=config.seed)
    if dataset.input_size != config.input_size:
        raise DataError(f"dataset {dataset.name} is {dataset.input_size}px but input_size={config.input_size}")
    out = config.out
    write_resolved(config, out)
    images = dataset.training_images(config.include_test)
    logger.info("training %s on %s: %d images (%s)", config.variant, dataset.name, len(images),
                "train+test" if config.include_test else "train split only")
    state = train(config.gan_config(), images, checkpoint_interval=config.checkpoint_interval,
                  out_dir=out, policy=config.augmentation_policy())
    summary = {"dataset": dataset.name, "training_images": len(images),
               "include_test": config.include_test, "iterations": state.iteration,
               "checkpoints": [c.id for c in state.checkpoints]}
    if config.select_peak and len(dataset.test) and dataset.test.has_boxes:
        scores = {}

        def score(ckpt: Checkpoint) -> float:
            rep = evaluate_checkpoint(ckpt, dataset.test, config.ratio)
            scores[ckpt.id] = rep.gt_known_loc
            return rep.gt_known_loc

        peak = select_peak_checkpoint(state.checkpoints, score)
        summary.update(scores=scores, peak_checkpoint=peak.id, peak_gt_known_loc=scores[peak.id])
        print(f"peak checkpoint={peak.id} gt_known_loc={scores[peak.id]:.6f}")
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(state.checkpoints)} checkpoints to {out}")
    return 0


def _maps_for(checkpoint: str, images_dir: str, skip_unreadable: bool):
    gan, g, d, _ = load_checkpoint(checkpoint)
    ids, images, boxes = _read_images(_image_entries(images_dir), gan.input_size, skip_unreadable)
    maps = cam_batch(d, images) if len(ids) else []
    return gan, g, ids, images, boxes, maps


def cmd_localize(args) -> int:
    ratio = 0.2 if args.ratio is None else args.ratio
    gan, _, ids, _, _, maps = _maps_for(args.checkpoint, args.images, skip_unreadable=False)
    out = args.out or "."
    config = _experiment_from_checkpoint(gan, ratio=ratio, out=out)
    write_resolved(config, out)
    path = os.path.join(out, "predictions.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        records = []
        for image_id, m in zip(ids, maps):
            res = localize_full(m, ratio)
            records.append((image_id, res.box, ratio, res.degenerate))
        write_predictions(fh, records)
    print(f"wrote {len(ids)} predictions to {path}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.manifest:
        raise ConfigError("evaluate needs --manifest")
    manifest = args.manifest
    if os.path.isdir(manifest):
        manifest = os.path.join(manifest, MANIFEST)
    entries = [e for e in read_manifest(manifest) if args.split in (None, "all", e.split)]
    truth = {e.image_id: e.box for e in entries if e.box is not None}
    if not truth:
        raise DataError(f"{manifest}: no annotated images in split {args.split!r}")
    ratio = args.ratio
    meta = {}
    if args.predictions:
        try:
            with open(args.predictions, encoding="utf-8") as fh:
                records = read_predictions(fh)
        except OSError as exc:
            raise DataError(f"cannot read {args.predictions}: {exc}") from None
        except (ValueError, KeyError) as exc:
            raise DataError(f"{args.predictions}: malformed prediction line ({exc})") from None
        preds = {r["image_id"]: r["box"] for r in records}
        if ratio is None and records:
            ratio = records[0]["ratio"]
        meta["checkpoint"] = args.checkpoint or ""
        report = score_boxes(preds, truth, ratio, **meta)
    elif args.checkpoint:
        ratio = 0.2 if ratio is None else ratio
        gan = load_checkpoint(args.checkpoint)[0]
        split = load_manifest_split([e for e in entries if e.box is not None], None, gan.input_size)
        report = evaluate_checkpoint(args.checkpoint, split, ratio, diversity_pairs=args.diversity_pairs,
                                     seed=args.seed or 0)
        report.checkpoint = os.path.basename(args.checkpoint)
    else:
        raise ConfigError("evaluate needs --predictions or --checkpoint")
    text = report.to_json()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    print(report.summary_line())
    return 0


def cmd_visualize(args) -> int:
    from .viz import panel, sample_grid, save_png

    ratio = 0.2 if args.ratio is None else args.ratio
    entries = _image_entries(args.images)
    gan, g, ids, images, boxes, maps = _maps_for(args.checkpoint, args.images, skip_unreadable=True)
    if not ids:
        raise DataError(f"none of the {len(entries)} images could be read")
    out = args.out or "."
    heat_dir = os.path.join(out, "heatmaps")
    os.makedirs(heat_dir, exist_ok=True)
    write_resolved(_experiment_from_checkpoint(gan, ratio=ratio, out=out), out)
    for image_id, image, box, m in zip(ids, images, boxes, maps):
        res = localize_full(m, ratio)
        heat = m.to_uint8()
        save_png(heat, os.path.join(heat_dir, f"{image_id}.png"))
        save_png(panel(image, heat, res.box, box), os.path.join(out, f"panel_{image_id}.png"))
    z = sample_latent(64, gan.latent_dim, torch.Generator().manual_seed(args.seed or 0))
    save_png(sample_grid(g, z), os.path.join(out, "samples.png"))
    print(f"wrote {len(ids)} panels and 1 sample grid to {out}")
    return 0


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gancoloc", description="GAN-based object co-localization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a GAN and write checkpoints")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dataset")
    p.add_argument("--root")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("localize", help="write one predicted box per image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="image directory or dataset directory with a manifest")
    p.add_argument("--ratio", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="GT-known localization accuracy")
    p.add_argument("--predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest", help="manifest.tsv or the directory holding it")
    p.add_argument("--split", default="test", help="manifest split to score, or 'all'")
    p.add_argument("--ratio", type=float)
    p.add_argument("--diversity-pairs", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="three-panel figures, heatmaps and a sample grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--ratio", type=float)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
