"""One-shot style adaptation for small NumPy CNNs."""

from .backbone import INSERTION_POINTS, ArchConfig, Backbone, build_backbone
from .config import TrainConfig, load_config, parse_config
from .domains import DomainSpec, StyleSpec, apply_fog, generate_dataset
from .harness import RunReport, evaluate, train
from .prototype import StylePrototype, extract_prototype, load_prototype, save_prototype
from .stats import ChannelStats, channel_mean, channel_stats, channel_std, instance_normalize
from .transform import NoiseSpec, adain, make_rng, ossa, sample_perturbation

__version__ = "0.1.0"

__all__ = [
    "INSERTION_POINTS",
    "ArchConfig",
    "Backbone",
    "ChannelStats",
    "DomainSpec",
    "NoiseSpec",
    "RunReport",
    "StylePrototype",
    "StyleSpec",
    "TrainConfig",
    "adain",
    "apply_fog",
    "build_backbone",
    "channel_mean",
    "channel_stats",
    "channel_std",
    "evaluate",
    "extract_prototype",
    "generate_dataset",
    "instance_normalize",
    "load_config",
    "load_prototype",
    "make_rng",
    "ossa",
    "parse_config",
    "sample_perturbation",
    "save_prototype",
    "train",
]
