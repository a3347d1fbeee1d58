"""Loss, optimization loop, run logging and checkpointing."""

import json
import time
import warnings
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig, train_config_from_dict, train_config_to_dict
from .data import load_manifest, load_sample
from .grids import argmax_lowest
from .metrics import ConfusionMatrix, UndefinedMetricError
from .pipeline import SegmentationModel

CHECKPOINT_VERSION = 1


def cross_entropy_loss(logits, target, ignore_index=255):
    """Mean per-pixel categorical cross entropy over non-ignored pixels.

    logits: (..., H, W, N_C); target: integer (..., H, W). Out-of-range
    labels raise; if every pixel is ignored the loss is defined as 0 (a
    warning is emitted) and contributes zero gradient.
    """
    n_c = logits.shape[-1]
    flat_logits = logits.reshape(-1, n_c)
    flat_target = target.reshape(-1)
    valid = flat_target != ignore_index
    picked = flat_target[valid]
    if picked.numel() and (picked.min() < 0 or picked.max() >= n_c):
        raise ValueError(f"target labels outside [0, {n_c}) and not ignore_index")
    if not picked.numel():
        warnings.warn("cross_entropy_loss: every pixel ignored, loss defined as 0")
        return flat_logits.sum() * 0.0
    logp = F.log_softmax(flat_logits[valid], dim=-1)
    return -logp.gather(1, picked[:, None]).mean()


def make_optimizer(model, cfg):
    """Decoupled-weight-decay adaptive optimizer over the trainable parameters."""
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_step(model, optimizer, images, targets, class_vecs, ignore_index=255, batch_ids=None):
    """One gradient step; returns the scalar loss. Aborts on non-finite loss."""
    model.train()
    logits = model.forward_with_vectors(images, class_vecs)
    loss = cross_entropy_loss(logits, targets, ignore_index)
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite loss on batch {batch_ids}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def evaluate_model(model, samples_np, categories, ignore_index=255):
    """mIoU/fwIoU/mACC of argmax predictions over (image, mask) pairs."""
    model.eval()
    cm = ConfusionMatrix(len(categories))
    class_vecs = model.class_vectors(categories)
    with torch.no_grad():
        for image, mask in samples_np:
            logits = model.forward_with_vectors(torch.as_tensor(image)[None], class_vecs)[0]
            pred = argmax_lowest(logits, dim=-1).numpy()
            cm.accumulate(pred, mask, ignore_index)
    try:
        return cm.summary()
    except UndefinedMetricError:
        return {"miou": float("nan"), "fwiou": float("nan"), "macc": float("nan")}


def save_checkpoint(path, model, optimizer, cfg, iteration, metric_history, sampler_state, categories):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "iteration": iteration,
            "model_state": model.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "config": train_config_to_dict(cfg),
            "metric_history": metric_history,
            "torch_rng": torch.get_rng_state(),
            "sampler_state": sampler_state,
            "categories": list(categories),
        },
        path,
    )


def load_checkpoint(path):
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    return blob


def model_from_checkpoint(blob):
    cfg = train_config_from_dict(blob["config"])
    model = SegmentationModel(cfg.model)
    model.load_state_dict(blob["model_state"])
    model.eval()
    return model, cfg


class _Sampler:
    """Seed-determined shuffled epoch stream of sample indices."""

    def __init__(self, n, batch_size, seed, state=None):
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        if state is not None:
            self.rng.bit_generator.state = state
        self._queue = []

    def next_batch(self):
        while len(self._queue) < self.batch_size:
            self._queue.extend(self.rng.permutation(self.n).tolist())
        batch, self._queue = self._queue[: self.batch_size], self._queue[self.batch_size:]
        return batch

    @property
    def state(self):
        return {"rng": self.rng.bit_generator.state, "queue": list(self._queue)}

    def restore_queue(self, queue):
        self._queue = list(queue)


def train_loop(cfg, dataset_dir, out_dir, resume=None):
    """Train to cfg.max_iterations (or the stop_miou target); returns the final checkpoint path.

    Side effects in out_dir: ``train_log.jsonl`` (one record per logged
    iteration), ``checkpoint_latest.pt`` plus periodic snapshots, and the
    metric history embedded in every checkpoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    registry, samples = load_manifest(Path(dataset_dir) / "manifest.json")
    train_samples = [s for s in samples if s.split == "train"]
    if not train_samples:
        raise ValueError("dataset has no training samples")
    eval_samples = [s for s in samples if s.split == cfg.eval_split] or train_samples

    root = Path(dataset_dir)
    train_np = [load_sample(root, s, cfg.image_side, registry, cfg.ignore_index) for s in train_samples]
    eval_np = [load_sample(root, s, cfg.image_side, registry, cfg.ignore_index) for s in eval_samples]

    torch.manual_seed(cfg.seed)
    if resume:
        blob = load_checkpoint(resume)
        model, _ = model_from_checkpoint(blob)
        model.train()
        optimizer = make_optimizer(model, cfg)
        optimizer.load_state_dict(blob["optimizer_state"])
        start = blob["iteration"]
        history = blob["metric_history"]
        sampler = _Sampler(len(train_np), cfg.batch_size, cfg.seed, state=blob["sampler_state"]["rng"])
        sampler.restore_queue(blob["sampler_state"]["queue"])
        torch.set_rng_state(blob["torch_rng"])
    else:
        model = SegmentationModel(cfg.model)
        optimizer = make_optimizer(model, cfg)
        start = 0
        history = []
        sampler = _Sampler(len(train_np), cfg.batch_size, cfg.seed)

    categories = list(registry.names)
    class_vecs = model.class_vectors(categories)
    log_path = out / "train_log.jsonl"
    log_f = open(log_path, "a")
    t0 = time.monotonic()

    def snapshot(it, tag="latest"):
        save_checkpoint(out / f"checkpoint_{tag}.pt", model, optimizer, cfg, it,
                        history, sampler.state, categories)

    it = start
    stop = False
    while it < cfg.max_iterations and not stop:
        ids = sampler.next_batch()
        images = torch.stack([torch.as_tensor(train_np[i][0]) for i in ids])
        targets = torch.stack([torch.as_tensor(train_np[i][1]) for i in ids])
        loss = train_step(model, optimizer, images, targets, class_vecs,
                          cfg.ignore_index, batch_ids=ids)
        it += 1
        if cfg.log_every and it % cfg.log_every == 0:
            rec = {"iteration": it, "loss": loss, "lr": cfg.lr,
                   "wall_time": round(time.monotonic() - t0, 4)}
            log_f.write(json.dumps(rec) + "\n")
            log_f.flush()
        if cfg.eval_every and it % cfg.eval_every == 0:
            metrics = evaluate_model(model, eval_np, categories, cfg.ignore_index)
            history.append({"iteration": it, **metrics})
            log_f.write(json.dumps({"iteration": it, "eval": metrics}) + "\n")
            log_f.flush()
            if cfg.stop_miou and metrics["miou"] >= cfg.stop_miou:
                stop = True
        if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            snapshot(it, tag=f"{it:06d}")
            snapshot(it)
    if not history or history[-1]["iteration"] != it:
        metrics = evaluate_model(model, eval_np, categories, cfg.ignore_index)
        history.append({"iteration": it, **metrics})
        log_f.write(json.dumps({"iteration": it, "eval": metrics}) + "\n")
    snapshot(it)
    log_f.close()
    return out / "checkpoint_latest.pt"
