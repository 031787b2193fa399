"""Datasets: synthetic shapes for desk-scale runs, plus directory ingestion.

A sample is an RGB image in [0,1] shaped (3,H,W) and an integer label map
shaped (H,W) where 255 marks ignored pixels.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

IGNORE_INDEX = 255

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class SegSample:
    image: np.ndarray  # float32 (3,H,W), values 0..1
    label: np.ndarray  # uint8 (H,W), class ids + 255 ignore

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3,H,W), got {self.image.shape}")
        if self.label.shape != self.image.shape[1:]:
            raise ValueError(
                f"label {self.label.shape} does not match image {self.image.shape[1:]}"
            )


class SegDataset:
    """A list-like of SegSamples; items may be lazy (callables)."""

    def __init__(self, items, num_classes=None, name="dataset"):
        self._items = list(items)
        self.num_classes = num_classes
        self.name = name

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i) -> SegSample:
        item = self._items[i]
        return item() if callable(item) else item

    def subset(self, indices, name=None) -> "SegDataset":
        return SegDataset(
            [self._items[i] for i in indices], self.num_classes, name or self.name
        )


# ---------------------------------------------------------------------------
# Synthetic shapes
# ---------------------------------------------------------------------------

# distinct base colors for up to 7 foreground classes
_PALETTE = np.array(
    [
        [0.9, 0.2, 0.2],
        [0.2, 0.55, 0.9],
        [0.95, 0.8, 0.15],
        [0.25, 0.8, 0.35],
        [0.75, 0.3, 0.85],
        [0.95, 0.5, 0.1],
        [0.15, 0.85, 0.8],
    ],
    dtype=np.float32,
)


def _textured_background(rng, h, w):
    base = rng.uniform(0.25, 0.6)
    coarse = rng.uniform(-0.08, 0.08, size=(max(1, h // 16), max(1, w // 16)))
    texture = np.kron(coarse, np.ones((16, 16)))[:h, :w]
    if texture.shape != (h, w):  # sizes not divisible by 16
        pad_h, pad_w = h - texture.shape[0], w - texture.shape[1]
        texture = np.pad(texture, ((0, pad_h), (0, pad_w)), mode="edge")
    img = np.empty((3, h, w), dtype=np.float32)
    for c in range(3):
        img[c] = base + texture + rng.normal(0.0, 0.015, size=(h, w))
    return np.clip(img, 0.0, 1.0)


def _shape_mask(rng, kind, h, w, scale=1.0):
    """One random shape; returns (mask, ideal_area) where ideal_area is the
    unclipped analytic area, letting callers reject heavily clipped draws."""
    cy = rng.uniform(0.18, 0.82) * h
    cx = rng.uniform(0.18, 0.82) * w
    r = rng.uniform(0.15, 0.28) * min(h, w) * scale
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # rectangle, mild random aspect
        ar = rng.uniform(0.7, 1.4)
        mask = (np.abs(yy - cy) <= r * ar) & (np.abs(xx - cx) <= r / ar)
        return mask, 4.0 * r * r
    if kind == 1:  # circle
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r, np.pi * r * r
    # triangle: three vertices around the center, inside = same side of all edges
    angles = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.1, 4.2]) + rng.uniform(-0.2, 0.2, 3)
    vy = cy + 1.3 * r * np.sin(angles)
    vx = cx + 1.3 * r * np.cos(angles)
    mask = np.ones((h, w), dtype=bool)
    for i in range(3):
        y0, x0 = vy[i], vx[i]
        y1, x1 = vy[(i + 1) % 3], vx[(i + 1) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        ref = (x1 - x0) * (vy[(i + 2) % 3] - y0) - (y1 - y0) * (vx[(i + 2) % 3] - x0)
        mask &= cross * ref >= 0
    area = 0.5 * abs(
        (vx[1] - vx[0]) * (vy[2] - vy[0]) - (vx[2] - vx[0]) * (vy[1] - vy[0])
    )
    return mask, area


class ShapesDataset(SegDataset):
    """Synthetic colored-shapes set with a fixed 80/20 train/val split."""

    def __init__(self, samples, num_classes, train_count):
        super().__init__(samples, num_classes, "synth_shapes")
        self._train_count = train_count

    @property
    def train(self) -> SegDataset:
        return self.subset(range(self._train_count), "synth_shapes:train")

    @property
    def val(self) -> SegDataset:
        return self.subset(range(self._train_count, len(self)), "synth_shapes:val")


def synth_shapes(n: int, num_classes: int, size=(192, 192), seed: int = 0) -> ShapesDataset:
    """Generate ``n`` images of colored shapes over a textured background.

    Foreground classes 1..K-1 cycle rectangle/circle/triangle with a fixed
    per-class color; class 0 is the background.  Every image contains at
    least one instance of every foreground class.  Deterministic per seed.
    """
    if not 2 <= num_classes <= 8:
        raise ValueError(f"num_classes must be in 2..8, got {num_classes}")
    h, w = int(size[0]), int(size[1])
    if h < 64 or w < 64:
        raise ValueError(f"size must be at least 64x64, got {h}x{w}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        img = _textured_background(rng, h, w)
        label = np.zeros((h, w), dtype=np.uint8)
        occupied = np.zeros((h, w), dtype=bool)
        extra = int(rng.integers(0, 2))
        order = rng.permutation(np.arange(1, num_classes))  # no class always goes last
        placements = [(int(cls), True) for cls in order]
        placements += [(int(rng.integers(1, num_classes)), False) for _ in range(extra)]
        for cls, required in placements:
            # placements are rejection-sampled: no overlap with earlier
            # shapes and at most mild clipping at the border, shrinking
            # slightly with each retry so a crowded canvas still finds
            # room; optional extras are dropped when it does not
            mask = None
            for attempt in range(40):
                mask, ideal = _shape_mask(rng, (cls - 1) % 3, h, w, scale=0.98 ** attempt)
                if not (mask & occupied).any() and mask.sum() >= 0.55 * ideal:
                    break
            else:
                if not required:
                    continue
            occupied |= mask
            color = np.clip(
                _PALETTE[cls - 1] + rng.uniform(-0.08, 0.08, 3).astype(np.float32), 0, 1
            )
            img[:, mask] = color[:, None] + rng.normal(0, 0.01, (3, int(mask.sum()))).astype(
                np.float32
            )
            label[mask] = cls
        samples.append(SegSample(np.clip(img, 0, 1).astype(np.float32), label))
    train_count = (n * 4) // 5
    return ShapesDataset(samples, num_classes, train_count)


# ---------------------------------------------------------------------------
# Directory ingestion: root/images/{split}/x.png + root/labels/{split}/x.png
# ---------------------------------------------------------------------------

def _load_pair(image_path, label_path):
    def loader():
        img = Image.open(image_path).convert("RGB")
        image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        lbl = Image.open(label_path)
        if lbl.mode not in ("L", "P", "I", "I;16"):
            lbl = lbl.convert("L")
        label = np.asarray(lbl)
        if label.ndim != 2:
            raise ValueError(f"{label_path}: label must be single-channel, got {label.shape}")
        if label.shape != image.shape[1:]:
            raise ValueError(
                f"{label_path}: label size {label.shape} does not match "
                f"image size {image.shape[1:]} of {image_path}"
            )
        return SegSample(image, label.astype(np.uint8))

    return loader


class DirectoryDataset:
    """Lazy view over images/{split}/ + labels/{split}/ with matching stems."""

    def __init__(self, root, splits):
        self.root = root
        self._splits = splits

    def splits(self):
        return sorted(self._splits)

    def split(self, name) -> SegDataset:
        if name not in self._splits:
            raise KeyError(f"{self.root}: no split {name!r} (have {self.splits()})")
        return self._splits[name]


def load_directory_dataset(root) -> DirectoryDataset:
    images_dir = os.path.join(root, "images")
    labels_dir = os.path.join(root, "labels")
    if not os.path.isdir(images_dir) or not os.path.isdir(labels_dir):
        raise FileNotFoundError(f"{root}: expected images/ and labels/ subdirectories")
    splits = {}
    for split in sorted(os.listdir(images_dir)):
        img_split = os.path.join(images_dir, split)
        if not os.path.isdir(img_split):
            continue
        lbl_split = os.path.join(labels_dir, split)
        items = []
        for fname in sorted(os.listdir(img_split)):
            stem, ext = os.path.splitext(fname)
            if ext.lower() not in _IMAGE_EXTS:
                continue
            image_path = os.path.join(img_split, fname)
            for lext in _IMAGE_EXTS:
                label_path = os.path.join(lbl_split, stem + lext)
                if os.path.exists(label_path):
                    break
            else:
                raise FileNotFoundError(f"no label found for image {image_path}")
            items.append(_load_pair(image_path, label_path))
        splits[split] = SegDataset(items, name=f"{root}:{split}")
    if not splits:
        raise FileNotFoundError(f"{root}: images/ contains no split directories")
    return DirectoryDataset(root, splits)
