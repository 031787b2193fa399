"""Datasets, metrics, and the training recipe."""

from pathseg.evaluation.data import (
    IGNORE_INDEX,
    DirectoryDataset,
    SegDataset,
    SegSample,
    ShapesDataset,
    load_directory_dataset,
    synth_shapes,
)
from pathseg.evaluation.metrics import ConfusionMatrix, evaluate_miou, predict
from pathseg.evaluation.training import (
    TrainConfig,
    augment,
    export_loss_history,
    poly_lr,
    segmentation_loss,
    train,
)

__all__ = [
    "IGNORE_INDEX",
    "DirectoryDataset",
    "SegDataset",
    "SegSample",
    "ShapesDataset",
    "load_directory_dataset",
    "synth_shapes",
    "ConfusionMatrix",
    "evaluate_miou",
    "predict",
    "TrainConfig",
    "augment",
    "export_loss_history",
    "poly_lr",
    "segmentation_loss",
    "train",
]
