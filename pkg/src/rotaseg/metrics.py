"""Confusion-matrix accumulation and segmentation metrics (mIoU, fwIoU, mACC)."""

import csv

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value (e.g. empty confusion matrix)."""


class ConfusionMatrix:
    """Integer N_C x N_C counts; rows = ground truth class, cols = predicted class."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt, ignore_index=255):
        """Add per-pixel counts for one prediction/ground-truth pair.

        Order independent; ignored pixels contribute nothing.
        """
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        valid = gt != ignore_index
        g = gt[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        if g.size and (g.min() < 0 or g.max() >= self.num_classes):
            raise ValueError("ground-truth label out of range")
        if p.size and (p.min() < 0 or p.max() >= self.num_classes):
            raise ValueError("predicted label out of range")
        self.counts += np.bincount(
            g * self.num_classes + p, minlength=self.num_classes**2
        ).reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self

    def _tp_fp_fn(self):
        tp = np.diag(self.counts)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        return tp, fp, fn

    def per_class_iou(self):
        """IoU per class; NaN for classes absent from both gt and prediction."""
        tp, fp, fn = self._tp_fp_fn()
        union = tp + fp + fn
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(union > 0, tp / np.maximum(union, 1), np.nan)

    def miou(self):
        """Mean IoU over classes with nonzero union."""
        iou = self.per_class_iou()
        if np.all(np.isnan(iou)):
            raise UndefinedMetricError("no class has a nonzero union")
        return float(np.nanmean(iou))

    def fwiou(self):
        """Ground-truth-frequency-weighted IoU."""
        tp, fp, fn = self._tp_fp_fn()
        n_i = self.counts.sum(axis=1)
        total = n_i.sum()
        if total == 0:
            raise UndefinedMetricError("no evaluated pixels")
        union = tp + fp + fn
        iou = np.where(union > 0, tp / np.maximum(union, 1), 0.0)
        return float((n_i * iou).sum() / total)

    def macc(self):
        """Mean per-class accuracy over classes present in the ground truth."""
        tp, _, fn = self._tp_fp_fn()
        present = (tp + fn) > 0
        if not present.any():
            raise UndefinedMetricError("no class present in the ground truth")
        acc = tp[present] / (tp + fn)[present]
        return float(acc.mean())

    def summary(self):
        return {"miou": self.miou(), "fwiou": self.fwiou(), "macc": self.macc()}


def write_report(cm, class_names, csv_path, txt_path=None):
    """Per-class IoU rows plus overall metrics, as CSV and aligned text.

    Values are written as percentages with 2 decimals to match the usual
    reporting convention; the in-memory metrics stay [0, 1] fractions.
    """
    iou = cm.per_class_iou()
    overall = cm.summary()
    rows = [("class", "iou_pct")]
    for name, v in zip(class_names, iou):
        rows.append((name, "" if np.isnan(v) else f"{100 * v:.2f}"))
    rows.append(("mIoU", f"{100 * overall['miou']:.2f}"))
    rows.append(("fwIoU", f"{100 * overall['fwiou']:.2f}"))
    rows.append(("mACC", f"{100 * overall['macc']:.2f}"))
    with open(csv_path, "w", newline="") as f:
        csv.writer(f).writerows(rows)
    if txt_path:
        width = max(len(r[0]) for r in rows)
        with open(txt_path, "w") as f:
            for name, v in rows[1:]:
                f.write(f"{name:<{width}}  {v or 'n/a'}\n")
    return overall
