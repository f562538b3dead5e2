"""Datasets, metrics and run configuration.

Training and evaluation protocols live in :mod:`structra.harness.protocols`.
"""
from .config import ConfigError, TrainConfig, load_config
from .data import DatasetError, DatasetSplit, few_shot_subset, load_csv_dataset
from .metrics import MetricsReport, m4_metrics

__all__ = ["ConfigError", "TrainConfig", "load_config", "DatasetError", "DatasetSplit",
           "few_shot_subset", "load_csv_dataset", "MetricsReport", "m4_metrics"]
