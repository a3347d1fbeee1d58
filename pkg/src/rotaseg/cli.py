"""Command-line entry points: dataset synthesis, training, evaluation,
single-image prediction and plotting.

Exit codes: 0 success, 2 usage/config error, 1 runtime failure.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import click
import numpy as np
import torch
import yaml
from PIL import Image

from .config import ConfigError, resolve_train_config, save_effective_config
from .data import SynthConfig, load_manifest, load_sample, synth_generate
from .grids import argmax_lowest
from .metrics import ConfusionMatrix, UndefinedMetricError, write_report
from .plots import plot_per_class_iou, plot_runs
from .train import load_checkpoint, model_from_checkpoint, train_loop


@click.group()
def main():
    """Open-vocabulary segmentation toolkit for overhead imagery."""


def _parse_categories(text):
    names = [c.strip() for c in text.split(",") if c.strip()]
    if not names:
        raise click.UsageError("empty category list")
    if len(set(names)) != len(names):
        raise click.UsageError("duplicate category names")
    return names


@main.command("make-synth")
@click.option("--out", required=True, type=click.Path(), help="output dataset directory")
@click.option("--num-images", default=16, show_default=True)
@click.option("--image-side", default=128, show_default=True)
@click.option("--num-categories", default=4, show_default=True)
@click.option("--shapes", default="1,4", show_default=True, help="min,max shapes per image")
@click.option("--scale-range", default="0.05,0.6", show_default=True, help="min,max shape size as side fraction")
@click.option("--jitter/--no-jitter", default=True, show_default=True, help="random shape orientations")
@click.option("--val-fraction", default=0.25, show_default=True)
@click.option("--rotated-val", is_flag=True, help="val split = train split rotated by 90 deg")
@click.option("--seed", default=0, show_default=True)
def cmd_make_synth(out, num_images, image_side, num_categories, shapes, scale_range,
                   jitter, val_fraction, rotated_val, seed):
    """Generate a deterministic synthetic shape dataset with manifest."""
    try:
        lo, hi = (int(x) for x in shapes.split(","))
        slo, shi = (float(x) for x in scale_range.split(","))
        cfg = SynthConfig(
            num_images=num_images, image_side=image_side, num_categories=num_categories,
            shapes_per_image=(lo, hi), scale_range=(slo, shi), orientation_jitter=jitter,
            seed=seed, val_fraction=val_fraction, rotated_val=rotated_val,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    registry, samples = synth_generate(cfg, out)
    save_effective_config(
        {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()},
        Path(out) / "synth_config.yaml",
    )
    click.echo(f"wrote {len(samples)} samples ({len(registry)} categories) to {out}")


@main.command("train")
@click.option("--data", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "overrides", multiple=True, help="config override key.path=value (repeatable)")
@click.option("--seed", type=int, default=None, help="shorthand for --set seed=N")
@click.option("--resume", type=click.Path(exists=True), default=None, help="checkpoint to continue from")
def cmd_train(dataset_dir, out, config_path, overrides, seed, resume):
    """Train a model; writes checkpoints, a run log and the effective config."""
    overrides = list(overrides) + ([f"seed={seed}"] if seed is not None else [])
    try:
        cfg, effective = resolve_train_config(config_path, overrides)
    except (ConfigError, ValueError) as exc:
        raise click.UsageError(str(exc))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_effective_config(effective, out / "config.yaml")
    ckpt = train_loop(cfg, dataset_dir, out, resume=resume)
    click.echo(f"final checkpoint: {ckpt}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default="val", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--categories", default=None,
              help="override the evaluation category list, comma separated")
def cmd_eval(checkpoint, dataset_dir, split, out, categories):
    """Evaluate a checkpoint: CSV/text report plus a per-class IoU figure."""
    blob = load_checkpoint(checkpoint)
    model, cfg = model_from_checkpoint(blob)
    registry, samples = load_manifest(Path(dataset_dir) / "manifest.json")
    names = _parse_categories(categories) if categories else list(registry.names)
    subset = [s for s in samples if s.split == split]
    if not subset:
        raise click.UsageError(f"no samples in split {split!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_effective_config(
        {"checkpoint": str(checkpoint), "data": str(dataset_dir), "split": split,
         "categories": names}, out / "eval_config.yaml")

    cm = ConfusionMatrix(len(names))
    class_vecs = model.class_vectors(names)
    root = Path(dataset_dir)
    with torch.no_grad():
        for s in subset:
            image, mask = load_sample(root, s, cfg.image_side, registry, cfg.ignore_index)
            logits = model.forward_with_vectors(torch.as_tensor(image)[None], class_vecs)[0]
            cm.accumulate(argmax_lowest(logits, dim=-1).numpy(), mask, cfg.ignore_index)
    try:
        overall = write_report(cm, names, out / "report.csv", out / "report.txt")
    except UndefinedMetricError as exc:
        raise click.UsageError(str(exc))
    plot_per_class_iou(names, cm.per_class_iou(), out / "per_class_iou.png")
    for k, v in overall.items():
        click.echo(f"{k}: {100 * v:.2f}")


def category_palette(names):
    """Deterministic RGB color per category, derived from the name hash."""
    colors = []
    for name in names:
        digest = hashlib.sha256(name.encode()).digest()
        colors.append(tuple(64 + digest[i] % 192 for i in range(3)))
    return colors


@main.command("predict")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--categories", required=True, help="free-form category names, comma separated")
@click.option("--out", required=True, type=click.Path())
def cmd_predict(checkpoint, image_path, categories, out):
    """Segment one image against a free-form category list."""
    names = _parse_categories(categories)
    blob = load_checkpoint(checkpoint)
    model, cfg = model_from_checkpoint(blob)
    try:
        img = Image.open(image_path).convert("RGB")
    except Exception as exc:
        raise click.UsageError(f"unreadable image {image_path}: {exc}")
    img = img.resize((cfg.image_side, cfg.image_side), Image.BILINEAR)
    arr = torch.as_tensor(np.asarray(img, dtype=np.float32) / 255.0)
    pred = model.predict(arr, names).numpy().astype(np.uint8)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pred, mode="L").save(out / "mask_indices.png")
    palette = category_palette(names)
    color = np.zeros((*pred.shape, 3), dtype=np.uint8)
    for i, c in enumerate(palette):
        color[pred == i] = c
    Image.fromarray(color).save(out / "mask_color.png")
    (out / "legend.json").write_text(json.dumps(
        {name: list(c) for name, c in zip(names, palette)}, indent=2))
    click.echo(f"wrote {out / 'mask_indices.png'} and {out / 'mask_color.png'}")


@main.command("plot-metrics")
@click.option("--log", "logs", multiple=True, required=True,
              type=click.Path(exists=True), help="run log (train_log.jsonl), repeatable")
@click.option("--out", required=True, type=click.Path())
def cmd_plot_metrics(logs, out):
    """Render loss/metric curves from one or more run logs (figures + CSV)."""
    written = plot_runs(list(logs), out)
    for p in written:
        click.echo(str(p))


if __name__ == "__main__":
    main()
