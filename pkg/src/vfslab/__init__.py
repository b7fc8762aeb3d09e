"""Video foreground segmentation lab: temporal-attention encoder-decoder
models, a procedural toy dataset generator, and a training/evaluation
harness with in-domain and out-of-domain reporting."""

__version__ = "0.1.0"

from .data import (
    ClipRef,
    ClipSample,
    DatasetManifest,
    VideoEntry,
    build_clip_index,
    decode_cdnet_label,
    load_clip,
    scan_cdnet,
    scan_simple,
    split_train_val,
)
from .losses import LossConfig, bce_loss, combined_loss, tversky_loss
from .metrics import ConfusionCounts, MetricsReport, aggregate_report, confusion_counts, metrics_from_counts
from .models import ModelConfig, build_model, count_parameters, predict_mask
from .toygen import SceneSpec, SpriteSpec, generate_toy_video, write_toyset
from .training import TrainConfig, evaluate, lr_at_epoch, train

__all__ = [
    "ClipRef",
    "ClipSample",
    "ConfusionCounts",
    "DatasetManifest",
    "LossConfig",
    "MetricsReport",
    "ModelConfig",
    "SceneSpec",
    "SpriteSpec",
    "TrainConfig",
    "VideoEntry",
    "aggregate_report",
    "bce_loss",
    "build_clip_index",
    "build_model",
    "combined_loss",
    "confusion_counts",
    "count_parameters",
    "decode_cdnet_label",
    "evaluate",
    "generate_toy_video",
    "load_clip",
    "lr_at_epoch",
    "metrics_from_counts",
    "predict_mask",
    "scan_cdnet",
    "scan_simple",
    "split_train_val",
    "train",
    "tversky_loss",
    "write_toyset",
]
