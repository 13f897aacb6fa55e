"""Labeled image collections with split tags, plus their on-disk layout.

A dataset is a stack of same-sized images with binary labels (0 = negative,
1 = rosacea positive) and a split tag. On disk a split lives under
``<root>/<split>/pos`` and ``<root>/<split>/neg`` as 8-bit PNGs with
zero-padded index names; positives come first in the in-memory order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .image_core import Image, ImageDims, load_image, save_image

if TYPE_CHECKING:
    from .roi_mask import LandmarkBoxes

__all__ = ["SPLITS", "LabeledDataset", "load_split", "save_split"]

SPLITS = ("train", "val", "test")

NEGATIVE = 0
POSITIVE = 1


@dataclass
class LabeledDataset:
    """Ordered (image, label) samples sharing one split tag and geometry."""

    pixels: np.ndarray  # (N, H, W, 3) float64 in [0, 1]
    labels: np.ndarray  # (N,) integer, each 0 or 1
    split: str
    landmarks: "LandmarkBoxes | None" = None

    def __post_init__(self) -> None:
        pix = np.ascontiguousarray(self.pixels, dtype=np.float64)
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if pix.ndim != 4 or pix.shape[3] != 3:
            raise ValueError(f"expected (N, H, W, 3) pixels, got shape {pix.shape}")
        if lab.ndim != 1 or lab.shape[0] != pix.shape[0]:
            raise ValueError("labels must be a 1-D array matching the sample count")
        if lab.size and not np.isin(lab, (NEGATIVE, POSITIVE)).all():
            raise ValueError("labels must be 0 or 1")
        if pix.size and (not np.isfinite(pix).all() or pix.min() < 0.0 or pix.max() > 1.0):
            raise ValueError("pixel intensities must be finite and within [0, 1]")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        self.pixels = pix
        self.labels = lab

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> ImageDims:
        _, h, w, _ = self.pixels.shape
        return ImageDims(height=h, width=w, channels=3)

    def image(self, index: int) -> Image:
        return Image(self.pixels[index].copy())

    def samples(self) -> Iterator[tuple[Image, int]]:
        for i in range(len(self)):
            yield self.image(i), int(self.labels[i])

    def positives(self) -> "LabeledDataset":
        keep = self.labels == POSITIVE
        return replace(self, pixels=self.pixels[keep], labels=self.labels[keep])

    @classmethod
    def from_images(
        cls,
        images: Sequence[Image],
        labels: Sequence[int],
        split: str,
        landmarks: "LandmarkBoxes | None" = None,
    ) -> "LabeledDataset":
        if len(images) != len(labels):
            raise ValueError("images and labels must have equal length")
        if not images:
            raise ValueError("from_images needs at least one image; build empty sets directly")
        pixels = np.stack([img.pixels for img in images], axis=0)
        return cls(pixels=pixels, labels=np.asarray(labels), split=split, landmarks=landmarks)


def save_split(data: LabeledDataset, root: str | Path) -> None:
    """Write one split's images under root/<split>/{pos,neg} as PNG files."""
    root = Path(root)
    pos_dir = root / data.split / "pos"
    neg_dir = root / data.split / "neg"
    pos_dir.mkdir(parents=True, exist_ok=True)
    neg_dir.mkdir(parents=True, exist_ok=True)
    pos_i = neg_i = 0
    for i in range(len(data)):
        img = Image(data.pixels[i])
        if data.labels[i] == POSITIVE:
            save_image(img, pos_dir / f"{pos_i:05d}.png")
            pos_i += 1
        else:
            save_image(img, neg_dir / f"{neg_i:05d}.png")
            neg_i += 1


def load_split(
    root: str | Path,
    split: str,
    landmarks: "LandmarkBoxes | None" = None,
) -> LabeledDataset:
    """Load a split saved by save_split; positives first, each in name order."""
    root = Path(root)
    split_dir = root / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"missing split directory: {split_dir}")
    images: list[np.ndarray] = []
    labels: list[int] = []
    for sub, label in (("pos", POSITIVE), ("neg", NEGATIVE)):
        sub_dir = split_dir / sub
        if not sub_dir.is_dir():
            continue
        for path in sorted(sub_dir.glob("*.png")):
            images.append(load_image(path).pixels)
            labels.append(label)
    if not images:
        raise ValueError(f"split directory {split_dir} contains no PNG images")
    return LabeledDataset(
        pixels=np.stack(images, axis=0),
        labels=np.asarray(labels),
        split=split,
        landmarks=landmarks,
    )
