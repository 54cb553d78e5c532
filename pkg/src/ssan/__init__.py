"""Simultaneous semantic alignment for heterogeneous domain adaptation.

Two domain-specific encoders map source and target features of different
widths into one common space, where a shared classifier, a domain
discriminator and class-centroid alignment are trained jointly.
"""

from .data import HdaDataset, SynthSpec, load_dataset, standardize_dataset, synth_generate
from .losses import LossWeights
from .model import Shapes, SsanModel, init_model
from .training import TrainConfig, train, train_target_only

__all__ = [
    "HdaDataset", "LossWeights", "Shapes", "SsanModel", "SynthSpec", "TrainConfig",
    "init_model", "load_dataset", "standardize_dataset", "synth_generate", "train",
    "train_target_only",
]

__version__ = "0.1.0"
