"""Rotation-aggregated similarity computation.

The query image is rotated into several quarter-turn views, each view is
encoded and compared against the category text embeddings, the resulting
per-view similarity maps are lifted to d_F channels, rotated back into
the original frame and fused into the initial semantic map stack
(h, w, N_C, d_F).
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .grids import cosine_map, inverse_rotation, rotate_grid


@dataclass(frozen=True)
class OrientationConfig:
    orientations: tuple = (0, 1, 2, 3)

    def __post_init__(self):
        if len(self.orientations) < 1:
            raise ValueError("need at least one orientation")
        if self.orientations[0] != 0:
            raise ValueError("first orientation must be 0 (the original view)")
        if len(set(self.orientations)) != len(self.orientations):
            raise ValueError("duplicate orientations")
        for t in self.orientations:
            if t not in (0, 1, 2, 3):
                raise ValueError(f"orientations are quarter turns in 0..3, got {t}")

    @property
    def count(self):
        return len(self.orientations)


def generate_rotated_views(image, cfg, spatial_dims=(0, 1)):
    """One rotated copy of the image per configured orientation; view 0 is the original."""
    return [rotate_grid(image, t, spatial_dims) for t in cfg.orientations]


def compute_orientation_similarities(features, class_vectors):
    """Per-view token-vs-category cosine similarities.

    features: list of N_A grids, each (h, w, d) or (B, h, w, d), all the
    same shape. class_vectors: (N_C, d). Returns (..., h, w, N_A, N_C),
    every entry in [-1, 1].
    """
    shapes = {tuple(f.shape) for f in features}
    if len(shapes) != 1:
        raise ValueError(f"feature grids disagree in shape: {shapes}")
    if features[0].shape[-1] != class_vectors.shape[-1]:
        raise ValueError(
            f"channel mismatch: features d={features[0].shape[-1]}, "
            f"embeddings d={class_vectors.shape[-1]}"
        )
    sims = [cosine_map(f, class_vectors) for f in features]  # each (..., h, w, N_C)
    return torch.stack(sims, dim=-2)


def aligned_similarity_slices(sims, cfg, spatial_dims=(0, 1)):
    """Rotate each orientation slice of (..., h, w, N_A, N_C) back to the 0-deg frame."""
    slices = []
    for k, t in enumerate(cfg.orientations):
        sl = sims[..., k, :]
        slices.append(rotate_grid(sl, inverse_rotation(t), spatial_dims))
    return torch.stack(slices, dim=-2)


class SimilarityEmbedder(nn.Module):
    """Lift scalar similarity planes to d_F channels.

    One shared convolution (1 input channel, spatial kernel ``kernel``)
    applied independently to every (orientation, category) plane.
    """

    def __init__(self, d_f=128, kernel=1):
        super().__init__()
        self.d_f = d_f
        self.conv = nn.Conv2d(1, d_f, kernel, padding=kernel // 2)

    def forward(self, sims):
        """(B, h, w, N_A, N_C) -> (B, h, w, N_A, N_C, d_F)."""
        b, h, w, na, nc = sims.shape
        planes = sims.permute(0, 3, 4, 1, 2).reshape(b * na * nc, 1, h, w)
        out = self.conv(planes)  # (b*na*nc, d_F, h, w)
        out = out.reshape(b, na, nc, self.d_f, h, w)
        return out.permute(0, 4, 5, 1, 2, 3)


class RotationFuser(nn.Module):
    """Rotate embedded slices back to the 0-deg frame and fuse across views.

    The per-view slices are concatenated along the feature axis and mixed
    by a shared pointwise map down to d_F channels, giving the initial
    semantic map stack (B, h, w, N_C, d_F).
    """

    def __init__(self, cfg, d_f=128):
        super().__init__()
        self.cfg = cfg
        self.d_f = d_f
        self.fuse = nn.Linear(cfg.count * d_f, d_f)

    def forward(self, embedded):
        b, h, w, na, nc, d_f = embedded.shape
        if na != self.cfg.count:
            raise ValueError(f"stack has {na} orientation slices, config expects {self.cfg.count}")
        aligned = []
        for k, t in enumerate(self.cfg.orientations):
            aligned.append(rotate_grid(embedded[:, :, :, k], inverse_rotation(t), spatial_dims=(1, 2)))
        stacked = torch.cat(aligned, dim=-1)  # (b, h, w, N_C, N_A*d_F)
        return self.fuse(stacked)
