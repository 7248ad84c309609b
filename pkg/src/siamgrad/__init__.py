"""Gradient-level analysis of siamese self-supervised learning methods.

Analytic gradients for contrastive, asymmetric and feature-decorrelation
losses in one decomposed form, the analytic predictor, a finite-difference
oracle, and a desk-scale numpy training loop to compare them.
"""

from .methods import METHOD_IDS, BatchViews, GradientDecomposition, MethodConfig, unified_grad
from .metrics import TrajectoryLog
from .predictor import CorrelationState, compute_predictor, update_correlation
from .trainer import TrainConfig, generate_dataset, train_run

__version__ = "0.1.0"

__all__ = [
    "METHOD_IDS",
    "BatchViews",
    "CorrelationState",
    "GradientDecomposition",
    "MethodConfig",
    "TrainConfig",
    "TrajectoryLog",
    "compute_predictor",
    "generate_dataset",
    "train_run",
    "unified_grad",
    "update_correlation",
]
