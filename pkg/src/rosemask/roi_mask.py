"""Redness-informed region-of-interest masking.

The mask is built from rosacea-positive training images only: average them
into a mean face, take its red channel, and keep exactly the top t percent
of pixels by red intensity. Selection is defined as "exactly
k = ceil(t/100 * H*W) pixels, highest red value first, ties at the boundary
broken by row-major pixel order", which is deterministic and keeps the
retained-pixel count exactly testable for every t. The same binary mask is
then applied to every image by broadcasting an element-wise multiply across
the three channels, zeroing everything outside the region of interest.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .dataset import LabeledDataset
from .image_core import Image, ImageDims

__all__ = [
    "BinaryMask",
    "Box",
    "LandmarkBoxes",
    "MaskBuildReport",
    "MaskSpec",
    "PrivacyAudit",
    "apply_mask",
    "build_mask",
    "load_mask",
    "load_mask_report",
    "mask_dataset",
    "mean_face",
    "privacy_audit",
    "save_mask",
    "save_mask_report",
    "select_top_k",
    "top_k_count",
]


@dataclass(frozen=True)
class MaskSpec:
    """Mask construction parameters: retained top percentage and geometry."""

    top_percent: float
    dims: ImageDims

    def __post_init__(self) -> None:
        if not (0.0 < self.top_percent <= 100.0):
            raise ValueError(f"top_percent must be in (0, 100], got {self.top_percent}")


@dataclass
class BinaryMask:
    """An H x W array over {0, 1}; 1 marks a retained pixel."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValueError(f"expected an HxW bit array, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")
        self.bits = arr

    @property
    def dims(self) -> ImageDims:
        h, w = self.bits.shape
        return ImageDims(height=h, width=w, channels=1)

    @property
    def selected_count(self) -> int:
        return int(self.bits.sum())

    def sha256(self) -> str:
        h, w = self.bits.shape
        digest = hashlib.sha256()
        digest.update(f"{h}x{w}:".encode())
        digest.update(self.bits.tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class MaskBuildReport:
    """Build statistics: the cut value and how much of the face survives."""

    spec: MaskSpec
    threshold_value: float  # red intensity of the last (k-th) selected pixel
    retention_fraction: float  # selected_count / (H * W)
    tie_count_at_threshold: int  # plane pixels whose value equals the threshold

    def to_dict(self) -> dict:
        return {
            "top_percent": self.spec.top_percent,
            "threshold_value": self.threshold_value,
            "retention_fraction": self.retention_fraction,
            "tie_count_at_threshold": self.tie_count_at_threshold,
            "dims": {"height": self.spec.dims.height, "width": self.spec.dims.width},
        }


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel rectangle: top/left corner plus height/width."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("box must be non-empty")
        if self.top < 0 or self.left < 0:
            raise ValueError("box must have non-negative origin")

    @property
    def area(self) -> int:
        return self.height * self.width

    def check_within(self, dims: ImageDims) -> None:
        if self.top + self.height > dims.height or self.left + self.width > dims.width:
            raise ValueError(f"box {self} exceeds {dims.height}x{dims.width} bounds")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)


@dataclass(frozen=True)
class LandmarkBoxes:
    """Ground-truth identity regions (eyes, mouth) used by the privacy audit."""

    left_eye: Box
    right_eye: Box
    mouth: Box

    def named(self) -> dict[str, Box]:
        return {"left_eye": self.left_eye, "right_eye": self.right_eye, "mouth": self.mouth}

    def to_dict(self) -> dict:
        return {
            name: {"top": b.top, "left": b.left, "height": b.height, "width": b.width}
            for name, b in self.named().items()
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "LandmarkBoxes":
        return cls(**{name: Box(**raw[name]) for name in ("left_eye", "right_eye", "mouth")})


@dataclass(frozen=True)
class PrivacyAudit:
    """Retained-pixel fractions inside the identity landmark boxes."""

    per_box: dict[str, float]
    overall: float  # retained fraction over the union of all boxes

    def to_dict(self) -> dict:
        return {"per_box": dict(self.per_box), "overall": self.overall}


def mean_face(data: LabeledDataset) -> Image:
    """Per-pixel, per-channel arithmetic mean over the positive samples.

    Accepts any dataset and averages its positive-labeled images; negatives
    are ignored. Raises ValueError when no positive sample is present.
    """
    positives = data.positives()
    if len(positives) == 0:
        raise ValueError("mean_face needs at least one positive sample")
    return Image(np.mean(positives.pixels, axis=0, dtype=np.float64))


def top_k_count(top_percent: float, dims: ImageDims) -> int:
    """Exact k = ceil(top_percent/100 * H*W), computed in rational arithmetic.

    Floating-point evaluation would round e.g. 0.29 * 19500 up to 5656; the
    Fraction form keeps integer-percent cases exact.
    """
    if not (0.0 < top_percent <= 100.0):
        raise ValueError(f"top_percent must be in (0, 100], got {top_percent}")
    return math.ceil(Fraction(top_percent) * dims.pixel_count / 100)


def select_top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values; ties broken toward lower indices.

    ``values`` is a flat row-major plane. The returned indices are in
    selection order (descending value, then ascending index), so for k1 < k2
    the k1-selection is a prefix of the k2-selection.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if not 1 <= k <= flat.size:
        raise ValueError(f"k must be in [1, {flat.size}], got {k}")
    order = np.argsort(-flat, kind="stable")
    return order[:k]


def build_mask(data: LabeledDataset, spec: MaskSpec) -> tuple[BinaryMask, MaskBuildReport]:
    """Build the redness-informed binary mask from training positives.

    Steps: mean face over the positive samples, red plane of the mean,
    exact top-k selection with row-major tie-breaking. The threshold value
    reported is the red intensity of the k-th (lowest ranked) selected pixel.

    Only train-split datasets are accepted; building a mask from validation
    or test data would leak the evaluation distribution into preprocessing.
    """
    if data.split != "train":
        raise ValueError(f"masks are built from the train split only, got {data.split!r}")
    if data.dims != spec.dims:
        raise ValueError(f"dataset dims {data.dims} do not match spec dims {spec.dims}")

    mean = mean_face(data)
    red = mean.pixels[:, :, 0].ravel()  # row-major contract for tie-breaking

    k = top_k_count(spec.top_percent, spec.dims)
    selected = select_top_k(red, k)
    threshold = float(red[selected[-1]])

    bits = np.zeros(red.size, dtype=np.uint8)
    bits[selected] = 1
    mask = BinaryMask(bits.reshape(spec.dims.height, spec.dims.width))
    report = MaskBuildReport(
        spec=spec,
        threshold_value=threshold,
        retention_fraction=k / spec.dims.pixel_count,
        tie_count_at_threshold=int(np.count_nonzero(red == threshold)),
    )
    return mask, report


def apply_mask(img: Image, mask: BinaryMask) -> Image:
    """Multiply every pixel's channels by its mask bit (element-wise product)."""
    h, w, _ = img.pixels.shape
    if (h, w) != mask.bits.shape:
        raise ValueError(f"mask shape {mask.bits.shape} does not match image {h}x{w}")
    return Image(img.pixels * mask.bits[:, :, None])


def mask_dataset(data: LabeledDataset, mask: BinaryMask) -> LabeledDataset:
    """Apply one mask uniformly to every image; labels and order unchanged."""
    if len(data) == 0:
        return data
    h, w = data.dims.height, data.dims.width
    if (h, w) != mask.bits.shape:
        raise ValueError(f"mask shape {mask.bits.shape} does not match dataset {h}x{w}")
    return LabeledDataset(
        pixels=data.pixels * mask.bits[None, :, :, None],
        labels=data.labels.copy(),
        split=data.split,
        landmarks=data.landmarks,
    )


def privacy_audit(mask: BinaryMask, boxes: LandmarkBoxes) -> PrivacyAudit:
    """Fraction of identity-landmark pixels the mask retains.

    Per box: retained bits / box area. Overall: retained bits over the
    union of the boxes (overlaps counted once).
    """
    dims = mask.dims
    per_box: dict[str, float] = {}
    union = np.zeros_like(mask.bits, dtype=bool)
    for name, box in boxes.named().items():
        box.check_within(dims)
        ys, xs = box.slices()
        per_box[name] = float(mask.bits[ys, xs].sum()) / box.area
        union[ys, xs] = True
    overall = float(mask.bits[union].sum()) / int(union.sum())
    return PrivacyAudit(per_box=per_box, overall=overall)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write the mask as a single-channel 8-bit PNG (bit 1 -> 255, 0 -> 0)."""
    PILImage.fromarray(mask.bits * np.uint8(255), mode="L").save(Path(path), format="PNG")


def load_mask(path: str | Path) -> BinaryMask:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    with PILImage.open(path) as img:
        if img.mode != "L":
            raise ValueError(f"mask PNG must be single-channel 8-bit, got mode {img.mode!r}")
        raw = np.asarray(img, dtype=np.uint8)
    if not np.isin(raw, (0, 255)).all():
        raise ValueError("mask PNG values must be exactly 0 or 255")
    return BinaryMask((raw == 255).astype(np.uint8))


def save_mask_report(report: MaskBuildReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_mask_report(path: str | Path) -> MaskBuildReport:
    raw = json.loads(Path(path).read_text())
    dims = ImageDims(height=raw["dims"]["height"], width=raw["dims"]["width"])
    return MaskBuildReport(
        spec=MaskSpec(top_percent=raw["top_percent"], dims=dims),
        threshold_value=raw["threshold_value"],
        retention_fraction=raw["retention_fraction"],
        tie_count_at_threshold=raw["tie_count_at_threshold"],
    )
