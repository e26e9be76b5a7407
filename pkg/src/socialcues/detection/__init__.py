"""Online object detection head."""
from __future__ import annotations

from .bootstrap import BootstrapLog, EmptyPoolError, FalkonParams, MinibootstrapConfig, minibootstrap_train
from .falkon import FalkonModel, conjugate_residual, falkon_train, gaussian_kernel, median_sigma
from .features import FEATURE_DIM, DegenerateBoxError, FrameIntegrals, extract_feature, extract_features
from .model import (
    ClassData,
    ClassHead,
    DetectionModel,
    DetectorConfig,
    FrameRois,
    collect_training_data,
    detect,
    frame_rois,
    load_detector,
    nms,
    save_detector,
    train_detector,
    train_from_data,
)
from .proposals import grid_boxes, propose_regions, proposal_array
from .rls import RlsRefiner, apply_deltas, box_deltas, rls_train

__all__ = [
    "BootstrapLog", "EmptyPoolError", "FalkonParams", "MinibootstrapConfig", "minibootstrap_train",
    "FalkonModel", "conjugate_residual", "falkon_train", "gaussian_kernel", "median_sigma",
    "FEATURE_DIM", "DegenerateBoxError", "FrameIntegrals", "extract_feature", "extract_features",
    "ClassData", "ClassHead", "DetectionModel", "DetectorConfig", "FrameRois", "frame_rois", "collect_training_data", "detect",
    "load_detector", "nms", "save_detector", "train_detector", "train_from_data",
    "grid_boxes", "propose_regions", "proposal_array",
    "RlsRefiner", "apply_deltas", "box_deltas", "rls_train",
]
