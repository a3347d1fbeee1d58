"""Scale-aware upsampling decoder.

Each stage pools the current semantic map stack into a spatial gate and
a channel gate, uses them to activate an earlier backbone feature level,
sums the activated features, concatenates the result onto every
category's feature axis of the 2x-upsampled stack and fuses back to d_F.
A final shared linear head turns the stack into per-category logits at
the requested output resolution.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .grids import bilinear_resize


@dataclass(frozen=True)
class DecoderConfig:
    num_stages: int = 2
    d_f: int = 128
    upsample_factor: int = 2

    def __post_init__(self):
        if self.num_stages < 0:
            raise ValueError("num_stages must be >= 0")
        if self.upsample_factor != 2:
            raise ValueError("only factor-2 upsampling stages are supported")


class UpsampleStage(nn.Module):
    """One 2x stage: gate an earlier feature level with pooled map statistics and fuse."""

    def __init__(self, d_f, feature_dim):
        super().__init__()
        self.d_f = d_f
        self.pre_pool = nn.Linear(d_f, d_f)
        self.sp_proj = nn.Linear(d_f, 1)
        self.ch_proj = nn.Linear(d_f, d_f)
        self.feat_proj = nn.Linear(feature_dim, d_f)
        self.fuse = nn.Linear(2 * d_f, d_f)
        self.connect = nn.Linear(d_f, d_f)

    def activation_vectors(self, stack):
        """(B, h, w, N_C, d_F) -> spatial gate (B, h, w, 1), channel gate (B, d_F).

        Spatial gate: pointwise map, mean over categories, scalar
        projection, sigmoid. Channel gate: mean over space and
        categories, d_F->d_F projection, sigmoid. Both in (0, 1).
        """
        pooled = self.pre_pool(stack).mean(dim=3)  # (B, h, w, d_F)
        v_sp = torch.sigmoid(self.sp_proj(pooled))
        v_ch = torch.sigmoid(self.ch_proj(stack.mean(dim=(1, 2, 3))))
        return v_sp, v_ch

    def activate_features(self, feats, v_sp, v_ch):
        """Gate features (B, H_L, W_L, d_F) spatially and channel-wise.

        The spatial gate is bilinearly resized from the map grid to the
        feature grid; the channel gate broadcasts over space.
        """
        if feats.shape[-1] != v_ch.shape[-1]:
            raise ValueError(
                f"channel mismatch: features {feats.shape[-1]} vs gate {v_ch.shape[-1]}"
            )
        gate = bilinear_resize(v_sp, feats.shape[1], feats.shape[2], spatial_dims=(1, 2))
        f_sp = gate * feats
        f_ch = v_ch[:, None, None, :] * feats
        return f_sp, f_ch

    def fuse_scale(self, stack_up, feats, f_sp, f_ch):
        """Concatenate the summed activated features onto every category slice and fuse."""
        if feats.shape[1:3] != stack_up.shape[1:3]:
            raise ValueError(
                f"resolution mismatch: features {tuple(feats.shape[1:3])} "
                f"vs upsampled maps {tuple(stack_up.shape[1:3])}"
            )
        g = f_sp + f_ch + feats  # (B, H_L, W_L, d_F), category independent
        g = g[:, :, :, None, :].expand(-1, -1, -1, stack_up.shape[3], -1)
        return self.fuse(torch.cat([g, stack_up], dim=-1))

    def forward(self, stack, level):
        """stack (B, h, w, N_C, d_F), level (B, *, *, d) -> (B, 2h, 2w, N_C, d_F)."""
        b, h, w, nc, d_f = stack.shape
        out_h, out_w = 2 * h, 2 * w
        feats = self.feat_proj(level)
        feats = bilinear_resize(feats, out_h, out_w, spatial_dims=(1, 2))
        v_sp, v_ch = self.activation_vectors(stack)
        f_sp, f_ch = self.activate_features(feats, v_sp, v_ch)
        stack_up = bilinear_resize(
            stack.reshape(b, h, w, nc * d_f), out_h, out_w, spatial_dims=(1, 2)
        ).reshape(b, out_h, out_w, nc, d_f)
        fused = self.fuse_scale(stack_up, feats, f_sp, f_ch)
        return self.connect(fused)


class LogitHead(nn.Module):
    """Shared d_F -> 1 projection per category token, then resize to output resolution."""

    def __init__(self, d_f):
        super().__init__()
        self.proj = nn.Linear(d_f, 1)

    def forward(self, stack, out_h, out_w):
        logits = self.proj(stack).squeeze(-1)  # (B, h, w, N_C)
        return bilinear_resize(logits, out_h, out_w, spatial_dims=(1, 2))


class ScaleAwareDecoder(nn.Module):
    """num_stages 2x upsampling stages (deep to shallow feature levels) plus the head."""

    def __init__(self, cfg, feature_dim, num_levels):
        super().__init__()
        if cfg.num_stages > num_levels - 1:
            raise ValueError(
                f"num_stages={cfg.num_stages} needs {cfg.num_stages + 1} backbone levels, "
                f"got {num_levels}"
            )
        self.cfg = cfg
        self.stages = nn.ModuleList(UpsampleStage(cfg.d_f, feature_dim) for _ in range(cfg.num_stages))
        self.head = LogitHead(cfg.d_f)

    def forward(self, stack, levels, out_h, out_w):
        """stack (B, h, w, N_C, d_F), levels shallow-to-deep -> logits (B, out_h, out_w, N_C).

        Stage i consumes levels[-2 - i]: the level just above the deepest
        first, then successively shallower ones.
        """
        for i, stage in enumerate(self.stages):
            stack = stage(stack, levels[-2 - i])
        return self.head(stack, out_h, out_w)
