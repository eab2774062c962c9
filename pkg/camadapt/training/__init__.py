"""Classifier training, residual-CycleGAN adaptation and convergence monitoring."""

from camadapt.training.adaptation import (
    AdaptationRegistry,
    AdaptationRun,
    AdaptationTrainer,
    RunRecord,
    adapt_and_classify,
    compute_feature_stats,
    feature_stats_of,
    load_generator,
    load_run,
    monitor_snapshot,
    save_run,
    train_adaptation,
)
from camadapt.training.classifier import ClassifierTrainer, EpochStats, train_classifier
from camadapt.training.config import TrainConfig, classifier_train_config, lr_at
from camadapt.training.data import load_images, load_labels, seeded_loader
from camadapt.training.monitor import (
    MonitorSnapshot,
    histogram_divergence,
    monitor_grid,
    residue_heatmap,
)

__all__ = [
    "AdaptationRegistry",
    "AdaptationRun",
    "AdaptationTrainer",
    "ClassifierTrainer",
    "EpochStats",
    "MonitorSnapshot",
    "RunRecord",
    "TrainConfig",
    "adapt_and_classify",
    "classifier_train_config",
    "compute_feature_stats",
    "feature_stats_of",
    "histogram_divergence",
    "load_generator",
    "load_images",
    "load_labels",
    "load_run",
    "lr_at",
    "monitor_grid",
    "monitor_snapshot",
    "residue_heatmap",
    "save_run",
    "seeded_loader",
    "train_adaptation",
    "train_classifier",
]
