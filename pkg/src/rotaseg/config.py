"""Run configuration: dataclasses, dict round-tripping, file/override merging.

Precedence is built-in defaults < config file < command-line overrides;
unknown keys are rejected and the effective config is persisted next to
every run's outputs.
"""

import copy
from dataclasses import asdict, dataclass, field

import yaml

from .backbone import BackboneSpec, PromptTemplate
from .data import IGNORE_INDEX
from .decoder import DecoderConfig
from .pipeline import ModelConfig
from .refine import RefineConfig
from .rotsim import OrientationConfig


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-3
    batch_size: int = 4
    max_iterations: int = 100000
    image_side: int = 384
    seed: int = 0
    ignore_index: int = IGNORE_INDEX
    log_every: int = 1
    checkpoint_every: int = 1000
    eval_every: int = 1000  # 0 disables periodic evaluation
    eval_split: str = "val"
    stop_miou: float = 0.0  # > 0: stop once the eval-split mIoU reaches this
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.max_iterations, self.image_side) < 0:
            raise ValueError("negative training hyperparameter")
        if self.image_side % self.model.backbone_spec.patch_size:
            raise ValueError("image_side must be divisible by the backbone patch size")


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_listify(v) for v in obj]
    return obj


def train_config_to_dict(cfg):
    # tuples become lists so the dict round-trips through YAML; the d_f
    # copies inside refine/decoder are redundant (they must agree with the
    # model-level value) so only the model-level one is serialized
    d = _listify(asdict(cfg))
    d["model"]["refine"].pop("d_f", None)
    d["model"]["decoder"].pop("d_f", None)
    return d


def model_config_from_dict(d):
    d = dict(d)
    d_f = int(d.get("d_f", 128))
    spec = d.get("backbone_spec", {})
    refine = dict(d.get("refine", {}))
    decoder = dict(d.get("decoder", {}))
    refine.setdefault("d_f", d_f)
    decoder.setdefault("d_f", d_f)
    return ModelConfig(
        backbone=d.get("backbone", "mock"),
        backbone_spec=BackboneSpec(
            embed_dim=int(spec.get("embed_dim", 64)),
            patch_size=int(spec.get("patch_size", 16)),
            level_ids=tuple(spec.get("level_ids", (0, 1, 2))),
        ),
        backbone_seed=int(d.get("backbone_seed", 42)),
        orientations=OrientationConfig(tuple(d.get("orientations", {}).get("orientations", (0, 1, 2, 3)))),
        refine=RefineConfig(
            repeats=int(refine.get("repeats", 2)),
            window_size=int(refine.get("window_size", 8)),
            heads=int(refine.get("heads", 4)),
            d_f=int(refine["d_f"]),
        ),
        decoder=DecoderConfig(
            num_stages=int(decoder.get("num_stages", 2)),
            d_f=int(decoder["d_f"]),
            upsample_factor=int(decoder.get("upsample_factor", 2)),
        ),
        d_f=d_f,
        embed_kernel=int(d.get("embed_kernel", 1)),
        prompt=PromptTemplate(d.get("prompt", {}).get("pattern", "an image of {}")),
    )


def train_config_from_dict(d):
    d = dict(d)
    model = model_config_from_dict(d.pop("model", {}))
    fields = {k: d[k] for k in d}
    return TrainConfig(model=model, **fields)


class ConfigError(ValueError):
    pass


def _coerce(default, raw):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, (tuple, list)):
        return tuple(int(x) if x.strip().lstrip("-").isdigit() else x.strip() for x in raw.split(","))
    return raw


def apply_overrides(base, overrides):
    """Apply ``key.path=value`` strings onto a nested config dict in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = base
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config key {path!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key {path!r}")
        node[leaf] = _coerce(node[leaf], raw)
    return base


def _check_known_keys(given, defaults, prefix=""):
    for k, v in given.items():
        if k not in defaults:
            raise ConfigError(f"unknown config key {prefix}{k!r}")
        if isinstance(v, dict) and isinstance(defaults[k], dict):
            _check_known_keys(v, defaults[k], prefix=f"{prefix}{k}.")


def _deep_merge(base, extra):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_merge(base[k], v)
        else:
            base[k] = v
    return base


def resolve_train_config(config_path=None, overrides=()):
    """defaults < YAML file < overrides -> (TrainConfig, effective dict)."""
    base = train_config_to_dict(TrainConfig())
    if config_path:
        loaded = yaml.safe_load(open(config_path)) or {}
        _check_known_keys(loaded, base)
        _deep_merge(base, loaded)
    apply_overrides(base, overrides)
    cfg = train_config_from_dict(copy.deepcopy(base))
    return cfg, base


def save_effective_config(d, path):
    with open(path, "w") as f:
        yaml.safe_dump(d, f, sort_keys=False)
