"""Matplotlib rendering of run logs and evaluation reports."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_run_log(path):
    """-> (loss records, eval records) from a line-delimited run log."""
    losses, evals = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "eval" in rec:
            evals.append({"iteration": rec["iteration"], **rec["eval"]})
        elif "loss" in rec:
            losses.append(rec)
    return losses, evals


def plot_runs(log_paths, out_dir, labels=None):
    """Loss curves and metric-vs-iteration figures plus the underlying CSVs.

    Returns the list of files written. Multiple logs are overlaid for
    comparison.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = labels or [Path(p).parent.name or f"run{i}" for i, p in enumerate(log_paths)]
    written = []

    parsed = [read_run_log(p) for p in log_paths]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (losses, _), label in zip(parsed, labels):
        if losses:
            ax.plot([r["iteration"] for r in losses], [r["loss"] for r in losses], label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    loss_png = out / "loss_curves.png"
    fig.savefig(loss_png, dpi=120)
    plt.close(fig)
    written.append(loss_png)

    loss_csv = out / "loss_curves.csv"
    with open(loss_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "iteration", "loss", "lr", "wall_time"])
        for (losses, _), label in zip(parsed, labels):
            for r in losses:
                w.writerow([label, r["iteration"], r["loss"], r.get("lr"), r.get("wall_time")])
    written.append(loss_csv)

    metrics = ("miou", "fwiou", "macc")
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for axm, metric in zip(axes, metrics):
        for (_, evals), label in zip(parsed, labels):
            if evals:
                axm.plot([r["iteration"] for r in evals], [100 * r[metric] for r in evals],
                         marker="o", label=label)
        axm.set_xlabel("iteration")
        axm.set_ylabel(f"{metric} (%)")
    axes[0].legend()
    fig.tight_layout()
    metric_png = out / "metric_curves.png"
    fig.savefig(metric_png, dpi=120)
    plt.close(fig)
    written.append(metric_png)

    metric_csv = out / "metric_curves.csv"
    with open(metric_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "iteration", *metrics])
        for (_, evals), label in zip(parsed, labels):
            for r in evals:
                w.writerow([label, r["iteration"], *[r[m] for m in metrics]])
    written.append(metric_csv)
    return written


def plot_per_class_iou(class_names, iou, out_path):
    """Horizontal per-class IoU bar chart rendered next to the eval CSV."""
    iou = np.asarray(iou, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 0.45 * len(class_names) + 1.5))
    ax.barh(range(len(class_names)), np.nan_to_num(100 * iou), color="#4878d0")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.invert_yaxis()
    ax.set_xlabel("IoU (%)")
    ax.set_xlim(0, 100)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
