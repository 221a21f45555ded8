"""
:mod:`invlab` -- Main API
=========================

This module exports the functions that cover most uses of invlab as a
library: building long-tailed variants, measuring invariance, training
classifiers with generative invariance transfer, and running sweeps.
"""
from ._version import __version__ as package_version
from .backbones import build_backbone
from .dataset import LabeledImageDataset, load_split, load_splits, save_splits
from .experiment import ExperimentConfig, ResultsTable, run_experiment
from .git import GitConfig, git_augment_batch, oracle_generator
from .longtail import (
    apply_oneshot_transform,
    build_isotransform_dataset,
    build_longtail_dataset,
    make_longtail_plan,
)
from .metrics import estimate_ekld, kl_divergence
from .miitn import MiitnTransform, train_miitn
from .nuisance import TransformDistribution
from .strategies import StrategyConfig, make_sampler
from .training import TrainSchedule, train_classifier

__version__ = package_version

__all__ = [
    "LabeledImageDataset",
    "load_split",
    "load_splits",
    "save_splits",
    "make_longtail_plan",
    "build_longtail_dataset",
    "apply_oneshot_transform",
    "build_isotransform_dataset",
    "TransformDistribution",
    "StrategyConfig",
    "make_sampler",
    "kl_divergence",
    "estimate_ekld",
    "MiitnTransform",
    "train_miitn",
    "GitConfig",
    "git_augment_batch",
    "oracle_generator",
    "TrainSchedule",
    "build_backbone",
    "train_classifier",
    "ExperimentConfig",
    "ResultsTable",
    "run_experiment",
]
