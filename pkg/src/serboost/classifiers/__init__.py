"""Classifier registry, metrics and model selection."""
from .core import DEFAULTS, KINDS, ModelSpec, TrainedModel, encode_labels, train
from .metrics import MetricsReport, classification_report, evaluate
from .selection import CVResult, GridResult, cross_validate, grid_search, stratified_folds

__all__ = [
    "DEFAULTS", "KINDS", "ModelSpec", "TrainedModel", "encode_labels", "train",
    "MetricsReport", "classification_report", "evaluate",
    "CVResult", "GridResult", "cross_validate", "grid_search", "stratified_folds",
]
