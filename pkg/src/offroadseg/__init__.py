"""Off-road semantic segmentation: training recipe, evaluation, and CLI."""

from .augment import GeometricConfig, PhotometricConfig, color_transform, geometric_pipeline, photometric_distortion, preview_grid
from .config import ConfigError, PipelineConfig, default_config, parse_config
from .evaluation import ConfusionMatrix, EvalReport, evaluate_dataset, iou_from_confusion, mean_iou, render_report
from .model import ModelConfig, SegmentationModel, build_model, cross_entropy_loss
from .optim import AdamW, EmaTracker, OptimConfig, ScheduleConfig, poly_lr
from .rng import RngStream
from .taxonomy import CLASS_NAMES, DEFAULT_PALETTE, IGNORE_ID, NUM_CLASSES, LabelMapping, load_mapping, remap
from .train import RunManifest, TrainingDivergedError, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CLASS_NAMES",
    "ConfigError",
    "ConfusionMatrix",
    "DEFAULT_PALETTE",
    "EmaTracker",
    "EvalReport",
    "GeometricConfig",
    "IGNORE_ID",
    "LabelMapping",
    "ModelConfig",
    "NUM_CLASSES",
    "OptimConfig",
    "PhotometricConfig",
    "PipelineConfig",
    "RngStream",
    "RunManifest",
    "ScheduleConfig",
    "SegmentationModel",
    "TrainingDivergedError",
    "build_model",
    "color_transform",
    "cross_entropy_loss",
    "default_config",
    "evaluate_dataset",
    "geometric_pipeline",
    "iou_from_confusion",
    "load_mapping",
    "mean_iou",
    "parse_config",
    "photometric_distortion",
    "poly_lr",
    "preview_grid",
    "remap",
    "render_report",
    "train",
]
