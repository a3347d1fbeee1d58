"""Full segmentation model: backbone -> rotation-aggregated similarities
-> refinement -> scale-aware decoding -> logits."""

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .backbone import BackboneSpec, PromptTemplate, build_backbone
from .grids import argmax_lowest
from .decoder import DecoderConfig, ScaleAwareDecoder
from .refine import RefineBlock, RefineConfig
from .rotsim import (
    OrientationConfig,
    RotationFuser,
    SimilarityEmbedder,
    compute_orientation_similarities,
    generate_rotated_views,
)


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "mock"
    backbone_spec: BackboneSpec = field(default_factory=BackboneSpec)
    backbone_seed: int = 42
    orientations: OrientationConfig = field(default_factory=OrientationConfig)
    refine: RefineConfig = None  # defaults to RefineConfig(d_f=d_f)
    decoder: DecoderConfig = None  # defaults to DecoderConfig(d_f=d_f)
    d_f: int = 128
    embed_kernel: int = 1
    prompt: PromptTemplate = field(default_factory=PromptTemplate)

    def __post_init__(self):
        if self.refine is None:
            object.__setattr__(self, "refine", RefineConfig(d_f=self.d_f))
        if self.decoder is None:
            object.__setattr__(self, "decoder", DecoderConfig(d_f=self.d_f))
        if self.refine.d_f != self.d_f or self.decoder.d_f != self.d_f:
            raise ValueError("d_f must agree across model, refine and decoder configs")
        if self.decoder.num_stages > len(self.backbone_spec.level_ids) - 1:
            raise ValueError("decoder stages exceed available backbone levels - 1")


class SegmentationModel(nn.Module):
    """Open-vocabulary segmenter; categories arrive as free-form text per call."""

    def __init__(self, cfg, backbone=None):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone or build_backbone(cfg.backbone, cfg.backbone_spec, cfg.backbone_seed)
        self.embedder = SimilarityEmbedder(cfg.d_f, kernel=cfg.embed_kernel)
        self.fuser = RotationFuser(cfg.orientations, cfg.d_f)
        self.refiner = RefineBlock(cfg.refine)
        self.decoder = ScaleAwareDecoder(cfg.decoder, self.backbone.spec.embed_dim,
                                         len(self.backbone.spec.level_ids))

    def class_vectors(self, categories):
        if not categories:
            raise ValueError("need at least one category")
        return self.backbone.encode_categories(self.cfg.prompt, list(categories))

    def forward(self, images, categories):
        """images (B, H, W, 3) or (H, W, 3), categories: list of names -> logits (..., H, W, N_C)."""
        squeeze = images.dim() == 3
        if squeeze:
            images = images[None]
        if images.shape[1] != images.shape[2]:
            raise ValueError("square input images required for rotation aggregation")
        class_vecs = self.class_vectors(categories)
        return self.forward_with_vectors(images, class_vecs)[0 if squeeze else slice(None)]

    def forward_with_vectors(self, images, class_vecs):
        views = generate_rotated_views(images, self.cfg.orientations, spatial_dims=(1, 2))
        levels = self.backbone.encode_image_multilevel(views[0])
        deepest = [levels[-1]]
        for v in views[1:]:
            deepest.append(self.backbone.encode_image_multilevel(v)[-1])
        sims = compute_orientation_similarities(deepest, class_vecs)  # (B,h,w,N_A,N_C)
        embedded = self.embedder(sims)
        stack = self.fuser(embedded)
        stack = self.refiner(stack)
        return self.decoder(stack, levels, images.shape[1], images.shape[2])

    @torch.no_grad()
    def predict(self, image, categories):
        """Per-pixel argmax labels; ties break toward the lowest category index."""
        logits = self.forward(image, categories)
        return argmax_lowest(logits, dim=-1)


def parameter_census(model):
    """Named inventory of every parameter: (name, count, frozen)."""
    rows = [(name, p.numel(), not p.requires_grad) for name, p in model.named_parameters()]
    backbone = getattr(model, "backbone", None)
    if isinstance(backbone, nn.Module):
        pass  # already covered by named_parameters
    elif backbone is not None and hasattr(backbone, "_mats"):
        for i, m in enumerate(backbone._mats):
            rows.append((f"backbone.level_matrix_{i}", m.numel(), True))
    return rows


def census_total(model, trainable_only=True):
    return sum(n for _, n, frozen in parameter_census(model) if not (trainable_only and frozen))
