"""Segmentation metrics: streaming confusion matrix and mean IoU."""

from __future__ import annotations

import numpy as np
import torch

from .data import IGNORE_INDEX


class ConfusionMatrix:
    """K x K integer confusion counts; rows = truth, cols = prediction.

    Pixels labeled 255 never enter the counts.  Accumulation is
    order-independent, so results can be merged across workers.
    """

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, truth: np.ndarray, pred: np.ndarray) -> None:
        truth = np.asarray(truth)
        pred = np.asarray(pred)
        if truth.shape != pred.shape:
            raise ValueError(f"truth {truth.shape} vs pred {pred.shape} shape mismatch")
        keep = truth != IGNORE_INDEX
        t = truth[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        k = self.num_classes
        if t.size and (t.min() < 0 or t.max() >= k):
            bad = int(t[(t < 0) | (t >= k)][0])
            raise ValueError(f"truth contains class id {bad} outside 0..{k - 1}")
        if p.size and (p.min() < 0 or p.max() >= k):
            bad = int(p[(p < 0) | (p >= k)][0])
            raise ValueError(f"pred contains class id {bad} outside 0..{k - 1}")
        self.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    def iou(self) -> np.ndarray:
        """Per-class IoU; classes with zero TP+FP+FN come back as NaN."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        out = np.full(self.num_classes, np.nan)
        seen = union > 0
        out[seen] = tp[seen] / union[seen]
        return out

    def miou(self) -> float:
        per_class = self.iou()
        if np.all(np.isnan(per_class)):
            raise ValueError("confusion matrix is empty; no class was ever observed")
        return float(np.nanmean(per_class))


def predict(net, sample) -> np.ndarray:
    """Argmax class map for one sample, shaped like its label."""
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            image = torch.from_numpy(np.ascontiguousarray(sample.image))
            logits = net(image)
        return logits.argmax(dim=0).numpy().astype(np.int64)
    finally:
        if was_training:
            net.train()


def evaluate_miou(net, dataset):
    """Mean IoU of `net` over `dataset`.

    Returns (miou, per_class) where per_class is a K-vector with NaN for
    classes never observed in either truth or prediction.
    """
    if len(dataset) == 0:
        raise ValueError(f"cannot evaluate on empty dataset {getattr(dataset, 'name', '')!r}")
    cm = ConfusionMatrix(net.num_classes)
    for i in range(len(dataset)):
        sample = dataset[i]
        cm.add(sample.label, predict(net, sample))
    return cm.miou(), cm.iou()
