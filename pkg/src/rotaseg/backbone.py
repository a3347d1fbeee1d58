"""Vision-language feature extractors.

Two deterministic mock encoders back the tests: ``MockVisionEncoder``
maps each non-overlapping patch's mean RGB through a fixed seeded d x 3
matrix per level, which makes it exactly equivariant to quarter-turn
rotations. The ``directional`` flavour adds within-patch gradient
statistics, deliberately breaking that equivariance so orientation
aggregation has something to aggregate.

A real pretrained dual-encoder plugs in through the same abstract
interface given externally supplied weights; it is never required by the
test suite.
"""

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class BackboneSpec:
    embed_dim: int = 64
    patch_size: int = 16
    level_ids: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.embed_dim <= 0 or self.patch_size <= 0:
            raise ValueError("embed_dim and patch_size must be positive")
        if list(self.level_ids) != sorted(set(self.level_ids)):
            raise ValueError("level_ids must be strictly increasing")


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str = "an image of {}"

    def __post_init__(self):
        if self.pattern.count("{}") != 1:
            raise ValueError("prompt template needs exactly one {} placeholder")

    def render(self, category_name):
        return self.pattern.format(category_name)


@dataclass
class ClassEmbedding:
    vector: torch.Tensor
    category_name: str


class VisionLanguageBackbone(ABC):
    """Frozen dual encoder: images to multi-level token grids, text to unit vectors."""

    spec: BackboneSpec

    @abstractmethod
    def encode_image_multilevel(self, image):
        """(H, W, 3) or (B, H, W, 3) image -> list of token grids, shallow to deep.

        Each grid is (h, w, d) (or batched) with h = w = side / patch_size.
        The deepest grid is the one used for similarity computation.
        """

    @abstractmethod
    def encode_text(self, template, category_name):
        """Deterministic unit-norm ClassEmbedding for one category name."""

    def encode_categories(self, template, names):
        if len(set(names)) != len(names):
            raise ValueError("duplicate category names")
        embs = [self.encode_text(template, n) for n in names]
        return torch.stack([e.vector for e in embs])


def _check_patchable(image, patch):
    side_h, side_w = image.shape[-3], image.shape[-2]
    if side_h % patch or side_w % patch:
        raise ValueError(f"image side {side_h}x{side_w} not divisible by patch size {patch}")


def _seeded_matrix(seed, tag, rows, cols):
    digest = hashlib.sha256(f"{seed}|{tag}".encode()).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    return torch.from_numpy(rng.standard_normal((rows, cols)) / np.sqrt(cols)).float()


class MockVisionEncoder(VisionLanguageBackbone):
    """Per-patch linear encoder used as the test oracle substrate.

    Every output token depends only on order-independent statistics of its
    own patch, so encode(rotate(I, t)) == rotate(encode(I), t) bit-exactly
    for quarter turns (patch sums are accumulated in sorted order to kill
    float reassociation). With ``directional=True`` two coordinate-ramp
    moments are mixed in; those do not rotate with the patch, so the
    encoder becomes orientation sensitive.
    """

    def __init__(self, spec=BackboneSpec(), seed=42, directional=False):
        self.spec = spec
        self.seed = seed
        self.directional = directional
        d = spec.embed_dim
        self._mats = [_seeded_matrix(seed, f"vision-level-{lid}", d, 3) for lid in spec.level_ids]
        if directional:
            self._dir_mats = [
                (_seeded_matrix(seed, f"vision-dx-{lid}", d, 3), _seeded_matrix(seed, f"vision-dy-{lid}", d, 3))
                for lid in spec.level_ids
            ]
        self._text = HashTextEncoder(d, seed)

    def _patch_stats(self, image):
        """(B, H, W, 3) -> mean, ramp-x, ramp-y moments, each (B, h, w, 3)."""
        p = self.spec.patch_size
        b, hh, ww, _ = image.shape
        h, w = hh // p, ww // p
        patches = image.reshape(b, h, p, w, p, 3).permute(0, 1, 3, 2, 4, 5)  # b,h,w,p,p,3
        flat = patches.reshape(b, h, w, p * p, 3).double()
        # canonical (sorted) summation order => bit-exact rotation invariance
        mean = torch.sort(flat, dim=3).values.sum(dim=3) / (p * p)
        if not self.directional:
            return mean.float(), None, None
        ramp = (torch.arange(p, dtype=torch.float64) - (p - 1) / 2) / max(p - 1, 1)
        wy = ramp.view(p, 1).expand(p, p).reshape(-1)
        wx = ramp.view(1, p).expand(p, p).reshape(-1)
        mx = (flat * wx.view(1, 1, 1, -1, 1)).sum(dim=3) / (p * p)
        my = (flat * wy.view(1, 1, 1, -1, 1)).sum(dim=3) / (p * p)
        return mean.float(), mx.float(), my.float()

    def encode_image_multilevel(self, image):
        if not isinstance(image, torch.Tensor):
            image = torch.as_tensor(image, dtype=torch.float32)
        squeeze = image.dim() == 3
        if squeeze:
            image = image[None]
        _check_patchable(image, self.spec.patch_size)
        mean, mx, my = self._patch_stats(image)
        levels = []
        for i, mat in enumerate(self._mats):
            feats = mean.to(mat.dtype) @ mat.T
            if self.directional:
                dx, dy = self._dir_mats[i]
                feats = feats + mx.to(mat.dtype) @ dx.T + my.to(mat.dtype) @ dy.T
            if not torch.isfinite(feats).all():
                raise RuntimeError("backbone produced non-finite features")
            levels.append(feats[0] if squeeze else feats)
        return levels

    def encode_text(self, template, category_name):
        return self._text.encode_text(template, category_name)


class HashTextEncoder:
    """Deterministic text branch: seeded-hash unit vector per prompt string."""

    def __init__(self, embed_dim, seed=42):
        self.embed_dim = embed_dim
        self.seed = seed

    def encode_text(self, template, category_name):
        if not category_name:
            raise ValueError("empty category name")
        prompt = template.render(category_name)
        vec = _seeded_matrix(self.seed, f"text|{prompt}", 1, self.embed_dim)[0]
        vec = vec / vec.norm()
        return ClassEmbedding(vector=vec, category_name=category_name)


class PretrainedAdapter(VisionLanguageBackbone):
    """Contract for a real dual-encoder (e.g. a CLIP-style ViT).

    Weight loading is out of scope here; subclasses supply the two encode
    callables and this class enforces the shape/normalization contract.
    """

    def __init__(self, spec, image_fn=None, text_fn=None, weights_path=None):
        self.spec = spec
        self._image_fn = image_fn
        self._text_fn = text_fn
        self.weights_path = weights_path
        if image_fn is None or text_fn is None:
            raise NotImplementedError(
                "PretrainedAdapter needs externally supplied encode callables or weights"
            )

    def encode_image_multilevel(self, image):
        if not isinstance(image, torch.Tensor):
            image = torch.as_tensor(image, dtype=torch.float32)
        _check_patchable(image[None] if image.dim() == 3 else image, self.spec.patch_size)
        levels = self._image_fn(image)
        if len(levels) != len(self.spec.level_ids):
            raise RuntimeError("adapter returned wrong number of levels")
        side = image.shape[-3] // self.spec.patch_size
        for lv in levels:
            if lv.shape[-3:] != (side, side, self.spec.embed_dim):
                raise RuntimeError(f"adapter level shape {tuple(lv.shape)} violates contract")
            if not torch.isfinite(lv).all():
                raise RuntimeError("backbone produced non-finite features")
        return levels

    def encode_text(self, template, category_name):
        if not category_name:
            raise ValueError("empty category name")
        vec = self._text_fn(template.render(category_name))
        vec = torch.as_tensor(vec, dtype=torch.float32)
        if abs(vec.norm().item() - 1.0) > 1e-5:
            vec = vec / vec.norm()
        return ClassEmbedding(vector=vec, category_name=category_name)


def build_backbone(name, spec=None, seed=42):
    spec = spec or BackboneSpec()
    if name == "mock":
        return MockVisionEncoder(spec, seed=seed)
    if name == "mock-directional":
        return MockVisionEncoder(spec, seed=seed, directional=True)
    raise ValueError(f"unknown backbone '{name}' (expected mock or mock-directional)")
