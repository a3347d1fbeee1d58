"""Spatial and category refinement of the semantic map stack.

Spatial refinement runs windowed self-attention over pixels within each
category slice (weights shared across categories); category refinement
runs position-free self-attention over the category tokens at each pixel
(weights shared across pixels). The two alternate ``repeats`` times.

Residual-branch output projections are zero-initialized, so a freshly
constructed refiner is the identity map.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class RefineConfig:
    repeats: int = 2
    window_size: int = 8
    heads: int = 4
    d_f: int = 128

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.window_size < 1 or self.heads < 1:
            raise ValueError("window_size and heads must be positive")
        if self.d_f % self.heads:
            raise ValueError(f"d_f={self.d_f} not divisible by heads={self.heads}")


class Mlp(nn.Module):
    def __init__(self, dim, expansion=4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * expansion)
        self.fc2 = nn.Linear(dim * expansion, dim)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class MultiheadSelfAttention(nn.Module):
    """Plain pre-projection MHSA over the last-but-one (token) axis, no positional signal."""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class AttentionBlock(nn.Module):
    """Pre-norm residual attention + MLP on (batch, tokens, dim)."""

    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


def window_partition(x, ws):
    """(B, H, W, C) -> (B*nWin, ws*ws, C), zero-padding ragged borders."""
    b, h, w, c = x.shape
    ph, pw = (-h) % ws, (-w) % ws
    if ph or pw:
        x = F.pad(x, (0, 0, 0, pw, 0, ph))
    hp, wp = h + ph, w + pw
    x = x.reshape(b, hp // ws, ws, wp // ws, ws, c).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, c), (hp, wp)


def window_merge(windows, padded_hw, hw, ws):
    hp, wp = padded_hw
    h, w = hw
    c = windows.shape[-1]
    x = windows.reshape(-1, hp // ws, wp // ws, ws, ws, c).permute(0, 1, 3, 2, 4, 5)
    x = x.reshape(-1, hp, wp, c)
    return x[:, :h, :w]


class WindowAttentionBlock(nn.Module):
    """Windowed self-attention block; ``shift`` > 0 cyclically shifts the grid first."""

    def __init__(self, dim, heads, window_size, shift=0):
        super().__init__()
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)

    def forward(self, x):
        """(B, H, W, C) -> same shape."""
        b, h, w, c = x.shape
        shortcut = x
        x = self.norm1(x)
        if self.shift:
            x = torch.roll(x, shifts=(-self.shift, -self.shift), dims=(1, 2))
        windows, padded = window_partition(x, self.window_size)
        windows = self.attn(windows)
        x = window_merge(windows, padded, (h, w), self.window_size)
        if self.shift:
            x = torch.roll(x, shifts=(self.shift, self.shift), dims=(1, 2))
        x = shortcut + x
        x = x + self.mlp(self.norm2(x))
        return x


class SpatialRefiner(nn.Module):
    """Regular-window then shifted-window attention over each category slice."""

    def __init__(self, cfg):
        super().__init__()
        self.block1 = WindowAttentionBlock(cfg.d_f, cfg.heads, cfg.window_size, shift=0)
        self.block2 = WindowAttentionBlock(cfg.d_f, cfg.heads, cfg.window_size, shift=cfg.window_size // 2)

    def forward(self, stack):
        """(B, h, w, N_C, d_F) -> same shape; categories processed as batch entries."""
        b, h, w, nc, d_f = stack.shape
        x = stack.permute(0, 3, 1, 2, 4).reshape(b * nc, h, w, d_f)
        x = self.block2(self.block1(x))
        return x.reshape(b, nc, h, w, d_f).permute(0, 2, 3, 1, 4)


class CategoryRefiner(nn.Module):
    """Position-free attention across the category tokens at each pixel."""

    def __init__(self, cfg):
        super().__init__()
        self.block = AttentionBlock(cfg.d_f, cfg.heads)

    def forward(self, stack):
        b, h, w, nc, d_f = stack.shape
        x = stack.reshape(b * h * w, nc, d_f)
        x = self.block(x)
        return x.reshape(b, h, w, nc, d_f)


class RefineBlock(nn.Module):
    """(spatial refine -> category refine) repeated ``cfg.repeats`` times, shape preserving."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.spatial = nn.ModuleList(SpatialRefiner(cfg) for _ in range(cfg.repeats))
        self.category = nn.ModuleList(CategoryRefiner(cfg) for _ in range(cfg.repeats))

    def forward(self, stack):
        for sp, ca in zip(self.spatial, self.category):
            stack = ca(sp(stack))
        return stack
