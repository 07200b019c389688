"""Unsupervised object co-localization with GAN discriminators."""

from .config import AugmentationPolicy, ExperimentConfig, GanConfig
from .estimator import CoLocalizer
from .localization import Box, localize
from .saliency import SaliencyMap, cam_batch, compute_cam

__all__ = [
    "AugmentationPolicy",
    "Box",
    "CoLocalizer",
    "ExperimentConfig",
    "GanConfig",
    "SaliencyMap",
    "cam_batch",
    "compute_cam",
    "localize",
]

__version__ = "0.1.0"
