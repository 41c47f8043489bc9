"""Gradient-free evidence tracing for small CNNs."""
from .backtrack import BacktrackConfig, FixationSet, compute_fixations, trace_fixations
from .forward import ActivationTrace, predict_label, run_forward
from .graph import NetworkGraph, load_model, save_model
from .metrics import iou, localization_error, precision_at_eer, proposal_metrics
from .postprocess import (BoundingBox, bbox_from_fixations, heatmap_from_fixations,
                          remove_outliers)

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "BacktrackConfig", "BoundingBox", "FixationSet", "NetworkGraph",
    "bbox_from_fixations", "compute_fixations", "heatmap_from_fixations", "iou", "load_model",
    "localization_error", "precision_at_eer", "predict_label", "proposal_metrics",
    "remove_outliers", "run_forward", "save_model", "trace_fixations",
]
