"""Open-vocabulary semantic segmentation for overhead imagery.

Rotation-aggregated similarity maps from a frozen vision-language
backbone, attention-based spatial/category refinement, and scale-aware
upsampling, plus training, evaluation and dataset tooling.
"""

from .backbone import BackboneSpec, MockVisionEncoder, PromptTemplate, build_backbone
from .config import TrainConfig
from .data import CategoryRegistry, SynthConfig, load_manifest, synth_generate
from .metrics import ConfusionMatrix
from .pipeline import ModelConfig, SegmentationModel, parameter_census

__all__ = [
    "BackboneSpec",
    "CategoryRegistry",
    "ConfusionMatrix",
    "MockVisionEncoder",
    "ModelConfig",
    "PromptTemplate",
    "SegmentationModel",
    "SynthConfig",
    "TrainConfig",
    "build_backbone",
    "load_manifest",
    "parameter_census",
    "synth_generate",
]

__version__ = "0.1.0"
