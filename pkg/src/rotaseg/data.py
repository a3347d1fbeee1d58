"""Dataset model: category registries, manifest I/O, sample loading, and a
synthetic generator producing orientation- and scale-varied shape scenes.

On-disk layout: ``images/*.png`` (8-bit RGB), ``masks/*.png`` (8-bit
single-channel index masks), ``manifest.json`` next to them. Mask value
255 is reserved globally as the ignore index.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

IGNORE_INDEX = 255

# Category lists of the four public overhead-imagery benchmarks.
DATASET_CATEGORIES = {
    "isaid": (
        "ship", "storage tank", "baseball diamond", "tennis court",
        "basketball court", "ground track field", "bridge", "large vehicle",
        "small vehicle", "helicopter", "swimming pool", "roundabout",
        "soccer ball field", "plane", "harbor",
    ),
    "dlrsd": (
        "airplane", "bare soil", "buildings", "cars", "chaparral", "court",
        "dock", "field", "grass", "mobile home", "pavement", "sand", "sea",
        "ship", "tanks", "trees", "water",
    ),
    "potsdam": ("impervious surfaces", "Building", "Low vegetation", "Tree", "Car", "background"),
    "vaihingen": ("impervious surfaces", "Building", "Low vegetation", "Tree", "Car", "background"),
}

SYNTH_CATEGORIES = (
    "background", "red bar", "green box", "blue disc", "yellow bar",
    "magenta box", "cyan disc", "orange bar",
)

_SYNTH_COLORS = (
    (40, 40, 40), (200, 30, 30), (30, 170, 30), (40, 60, 210), (210, 200, 30),
    (190, 40, 190), (40, 190, 190), (230, 130, 20),
)


@dataclass(frozen=True)
class CategoryRegistry:
    names: tuple
    dataset_id: str = "custom"

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate category names in registry")
        if not self.names:
            raise ValueError("empty category registry")

    def index_of(self, name):
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


def builtin_registry(dataset_id):
    return CategoryRegistry(DATASET_CATEGORIES[dataset_id], dataset_id)


@dataclass(frozen=True)
class Sample:
    image: str
    mask: str
    split: str = "train"


@dataclass(frozen=True)
class SynthConfig:
    num_images: int = 16
    image_side: int = 128
    num_categories: int = 4  # includes the background class
    shapes_per_image: tuple = (1, 4)
    scale_range: tuple = (0.05, 0.6)
    orientation_jitter: bool = True
    seed: int = 0
    val_fraction: float = 0.25
    rotated_val: bool = False  # val split = train split rotated by 90 deg

    def __post_init__(self):
        if not (2 <= self.num_categories <= 8):
            raise ValueError("num_categories must be in 2..8")
        if self.num_images < 1 or self.image_side < 8:
            raise ValueError("num_images and image_side must be positive")
        lo, hi = self.scale_range
        if not (0 < lo <= hi <= 1):
            raise ValueError("scale_range must lie within (0, 1]")


def save_manifest(path, registry, samples, ignore_index=IGNORE_INDEX):
    doc = {
        "dataset_id": registry.dataset_id,
        "categories": list(registry.names),
        "ignore_index": ignore_index,
        "samples": [{"image": s.image, "mask": s.mask, "split": s.split} for s in samples],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    registry = CategoryRegistry(tuple(doc["categories"]), doc.get("dataset_id", "custom"))
    samples = [Sample(s["image"], s["mask"], s.get("split", "train")) for s in doc["samples"]]
    if not samples:
        raise ValueError("manifest lists no samples")
    root = path.parent
    for s in samples:
        for rel in (s.image, s.mask):
            if not (root / rel).exists():
                raise FileNotFoundError(f"sample file missing: {root / rel}")
    return registry, samples


def load_sample(root, sample, image_side=None, registry=None, ignore_index=IGNORE_INDEX):
    """-> (image float32 (H, W, 3) in [0, 1], mask int64 (H, W)).

    Images are bilinearly resized, masks with nearest neighbour so no new
    label values can appear. Mask values are validated against the
    registry when one is given.
    """
    root = Path(root)
    try:
        img = Image.open(root / sample.image).convert("RGB")
        mask = Image.open(root / sample.mask)
    except Exception as exc:
        raise IOError(f"failed to decode sample under {root}: {exc}") from exc
    if img.size != mask.size:
        raise ValueError(f"image/mask size mismatch for {sample.image}")
    if image_side is not None and img.size != (image_side, image_side):
        img = img.resize((image_side, image_side), Image.BILINEAR)
        mask = mask.resize((image_side, image_side), Image.NEAREST)
    image = np.asarray(img, dtype=np.float32) / 255.0
    labels = np.asarray(mask, dtype=np.int64)
    if registry is not None:
        bad = np.setdiff1d(np.unique(labels), np.arange(len(registry)))
        bad = bad[bad != ignore_index]
        if bad.size:
            raise ValueError(f"mask {sample.mask} contains out-of-range labels {bad.tolist()}")
    return image, labels


def _shape_polygon(kind, cx, cy, size, angle):
    """Corner points of one shape instance; ellipses are 64-gon approximations."""
    if kind == "bar":
        hw, hh = size / 2, size / 8
        corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
    elif kind == "box":
        hw = hh = size / 2
        corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
    else:  # disc
        corners = [
            (size / 2 * math.cos(t), size / 3 * math.sin(t))
            for t in np.linspace(0, 2 * math.pi, 64, endpoint=False)
        ]
    ca, sa = math.cos(angle), math.sin(angle)
    return [(cx + x * ca - y * sa, cy + x * sa + y * ca) for x, y in corners]


def synth_generate(cfg, out_dir):
    """Write a deterministic synthetic dataset and return (registry, samples).

    Each image is a solid background with category-coloured shapes; the
    mask is the exact rasterization of the same geometry. Identical
    configs produce byte-identical files.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    registry = CategoryRegistry(SYNTH_CATEGORIES[: cfg.num_categories], "synthetic")
    kinds = [None] + [("bar", "box", "disc")[(i - 1) % 3] for i in range(1, cfg.num_categories)]

    n_val = int(round(cfg.num_images * cfg.val_fraction)) if not cfg.rotated_val else 0
    n_train = cfg.num_images - n_val
    samples = []
    side = cfg.image_side
    for idx in range(cfg.num_images if not cfg.rotated_val else n_train):
        img = Image.new("RGB", (side, side), _SYNTH_COLORS[0])
        mask = Image.new("L", (side, side), 0)
        di, dm = ImageDraw.Draw(img), ImageDraw.Draw(mask)
        for _ in range(rng.integers(cfg.shapes_per_image[0], cfg.shapes_per_image[1] + 1)):
            cat = int(rng.integers(1, cfg.num_categories))
            size = float(rng.uniform(*cfg.scale_range)) * side
            cx, cy = rng.uniform(0.1 * side, 0.9 * side, size=2)
            angle = float(rng.uniform(0, 2 * math.pi)) if cfg.orientation_jitter else 0.0
            poly = _shape_polygon(kinds[cat], cx, cy, size, angle)
            base = _SYNTH_COLORS[cat]
            jitter = rng.integers(-15, 16, size=3)
            color = tuple(int(np.clip(c + j, 0, 255)) for c, j in zip(base, jitter))
            di.polygon(poly, fill=color)
            dm.polygon(poly, fill=cat)
        split = "train" if idx < n_train else "val"
        img.save(out / "images" / f"{idx:04d}.png")
        mask.save(out / "masks" / f"{idx:04d}.png")
        samples.append(Sample(f"images/{idx:04d}.png", f"masks/{idx:04d}.png", split))

    if cfg.rotated_val:
        for idx in range(n_train):
            img = np.asarray(Image.open(out / "images" / f"{idx:04d}.png"))
            msk = np.asarray(Image.open(out / "masks" / f"{idx:04d}.png"))
            name = f"{idx + n_train:04d}.png"
            Image.fromarray(np.rot90(img)).save(out / "images" / name)
            Image.fromarray(np.rot90(msk)).save(out / "masks" / name)
            samples.append(Sample(f"images/{name}", f"masks/{name}", "val"))

    save_manifest(out / "manifest.json", registry, samples)
    return registry, samples
