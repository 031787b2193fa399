"""Training loop: SGD + poly schedule + standard segmentation augmentations."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import IGNORE_INDEX


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    power: float = 0.9
    total_iters: int = 1000
    batch_size: int = 8
    crop: tuple = (192, 192)
    scale_range: tuple = (0.5, 2.0)
    hflip: bool = True
    color_jitter: bool = False
    seed: int = 0
    # heavyweight options, off by default
    hard_mining: bool = False
    init_checkpoint: str | None = None

    def __post_init__(self):
        self.crop = (int(self.crop[0]), int(self.crop[1]))
        self.scale_range = (float(self.scale_range[0]), float(self.scale_range[1]))
        if self.total_iters < 0:
            raise ValueError(f"total_iters must be >= 0, got {self.total_iters}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 < self.scale_range[0] <= self.scale_range[1]:
            raise ValueError(f"need 0 < scale min <= scale max, got {self.scale_range}")
        if min(self.crop) < 1:
            raise ValueError(f"crop must be positive, got {self.crop}")


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - iter/total_iters) ** power."""
    if not 0 <= iteration < cfg.total_iters:
        raise ValueError(
            f"iteration {iteration} outside schedule range 0..{cfg.total_iters - 1}"
        )
    return cfg.base_lr * (1.0 - iteration / cfg.total_iters) ** cfg.power


# ---------------------------------------------------------------------------
# Augmentations. Geometry is applied identically to image and label; the
# label uses nearest interpolation and 255 padding, the image bilinear and
# per-channel-mean padding.
# ---------------------------------------------------------------------------

def _rescale(image, label, factor):
    if factor == 1.0:
        return image, label
    h, w = label.shape[-2:]
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    image = F.interpolate(
        image.unsqueeze(0), size=(nh, nw), mode="bilinear", align_corners=False
    ).squeeze(0)
    label = (
        F.interpolate(label.unsqueeze(0).unsqueeze(0).float(), size=(nh, nw), mode="nearest")
        .squeeze(0)
        .squeeze(0)
        .long()
    )
    return image, label


def _pad_to(image, label, ch, cw):
    h, w = label.shape[-2:]
    pad_h, pad_w = max(0, ch - h), max(0, cw - w)
    if pad_h == 0 and pad_w == 0:
        return image, label
    mean = image.mean(dim=(1, 2))
    out_img = mean[:, None, None].expand(3, h + pad_h, w + pad_w).clone()
    out_img[:, :h, :w] = image
    out_lbl = torch.full((h + pad_h, w + pad_w), IGNORE_INDEX, dtype=torch.long)
    out_lbl[:h, :w] = label
    return out_img, out_lbl


def _color_jitter(image, rng):
    for kind in ("brightness", "contrast", "saturation"):
        f = float(rng.uniform(0.8, 1.2))
        if kind == "brightness":
            image = image * f
        elif kind == "contrast":
            mean = image.mean()
            image = mean + (image - mean) * f
        else:
            gray = image.mean(dim=0, keepdim=True)
            image = gray + (image - gray) * f
    return image.clamp(0.0, 1.0)


def augment(sample, cfg: TrainConfig, rng) -> tuple:
    """One random train-time view of a sample: scale, pad, crop, flip, jitter.

    Returns (image (3,ch,cw) float32 tensor, label (ch,cw) long tensor).
    """
    image = torch.from_numpy(np.ascontiguousarray(sample.image))
    label = torch.from_numpy(np.ascontiguousarray(sample.label)).long()
    factor = float(rng.uniform(cfg.scale_range[0], cfg.scale_range[1]))
    image, label = _rescale(image, label, factor)
    ch, cw = cfg.crop
    image, label = _pad_to(image, label, ch, cw)
    h, w = label.shape
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    image = image[:, y0 : y0 + ch, x0 : x0 + cw]
    label = label[y0 : y0 + ch, x0 : x0 + cw]
    if cfg.hflip and rng.random() < 0.5:
        image = torch.flip(image, dims=[2])
        label = torch.flip(label, dims=[1])
    if cfg.color_jitter:
        image = _color_jitter(image, rng)
    return image.contiguous(), label.contiguous()


def segmentation_loss(logits, labels, hard_mining=False):
    """Pixelwise cross-entropy ignoring 255; all-ignored batches give loss 0."""
    if not (labels != IGNORE_INDEX).any():
        return logits.sum() * 0.0
    if hard_mining:
        per_pixel = F.cross_entropy(
            logits, labels, ignore_index=IGNORE_INDEX, reduction="none"
        )
        valid = (labels != IGNORE_INDEX).reshape(-1)
        losses = per_pixel.reshape(-1)[valid]
        keep = max(1, losses.numel() // 4)
        return losses.topk(keep).values.mean()
    return F.cross_entropy(logits, labels, ignore_index=IGNORE_INDEX)


def train(net, dataset, cfg: TrainConfig):
    """Train `net` on `dataset` per `cfg`; returns (net, loss history).

    History rows are (iteration, lr, loss).  Deterministic given cfg.seed.
    """
    if len(dataset) == 0:
        raise ValueError(f"cannot train on empty dataset {getattr(dataset, 'name', '')!r}")
    data_classes = getattr(dataset, "num_classes", None)
    if data_classes is not None and data_classes != net.num_classes:
        raise ValueError(
            f"network expects {net.num_classes} classes but dataset has {data_classes}"
        )
    if cfg.init_checkpoint:
        from ..netcore.checkpoint import load_weights

        load_weights(net, cfg.init_checkpoint)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.SGD(
        net.parameters(),
        lr=cfg.base_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    history = []
    net.train()
    try:
        for iteration in range(cfg.total_iters):
            lr = poly_lr(iteration, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            indices = rng.integers(0, len(dataset), size=cfg.batch_size)
            views = []
            for idx in indices:
                sample = dataset[int(idx)]
                bad = (sample.label != IGNORE_INDEX) & (sample.label >= net.num_classes)
                if bad.any():
                    raise ValueError(
                        f"sample {int(idx)} of {getattr(dataset, 'name', 'dataset')!r} "
                        f"contains class id {int(sample.label[bad].min())} "
                        f">= num_classes {net.num_classes}"
                    )
                views.append(augment(sample, cfg, rng))
            images = torch.stack([v[0] for v in views])
            labels = torch.stack([v[1] for v in views])
            logits = net(images)
            loss = segmentation_loss(logits, labels, cfg.hard_mining)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            history.append((iteration, lr, float(loss.detach())))
    finally:
        net.eval()
    return net, history


def export_loss_history(history, path) -> None:
    """Write the (iter, lr, loss) history as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "lr", "loss"])
        for iteration, lr, loss in history:
            writer.writerow([iteration, f"{lr:.10g}", f"{loss:.10g}"])
