"""Canonical image representation, PNG/JPEG I/O and geometric normalization.

Pixels are kept as real intensities in [0, 1] (float64) so that downstream
averaging and thresholding run at full precision; quantization to 8 bits
happens only at the file boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

__all__ = [
    "CANONICAL_DIMS",
    "ChannelPlane",
    "Image",
    "ImageDims",
    "center_crop_resize",
    "extract_channel",
    "load_image",
    "save_image",
]


@dataclass(frozen=True)
class ImageDims:
    """Height/width/channel counts of an image or plane."""

    height: int
    width: int
    channels: int = 3

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"dims must be at least 1x1, got {self.height}x{self.width}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")

    @property
    def pixel_count(self) -> int:
        return self.height * self.width


# Canonical face size used throughout the pipeline, fixed as height=150,
# width=130 (portrait orientation). Every stage validates against these dims
# and rejects mismatches instead of resizing silently: the ROI mask is a fixed
# per-pixel artifact and must never be misaligned.
CANONICAL_DIMS = ImageDims(height=150, width=130, channels=3)


def _check_unit_interval(values: np.ndarray, what: str) -> None:
    if values.size and (not np.isfinite(values).all() or values.min() < 0.0 or values.max() > 1.0):
        raise ValueError(f"{what} intensities must be finite and within [0, 1]")


@dataclass
class Image:
    """An H x W x 3 color image with intensities in [0, 1], row-major."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 pixel array, got shape {arr.shape}")
        _check_unit_interval(arr, "image")
        self.pixels = arr

    @property
    def dims(self) -> ImageDims:
        h, w, c = self.pixels.shape
        return ImageDims(height=h, width=w, channels=c)


@dataclass
class ChannelPlane:
    """A single H x W channel plane with values in [0, 1], row-major."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected an HxW value array, got shape {arr.shape}")
        _check_unit_interval(arr, "plane")
        self.values = arr

    @property
    def dims(self) -> ImageDims:
        h, w = self.values.shape
        return ImageDims(height=h, width=w, channels=1)


def load_image(path: str | Path) -> Image:
    """Load an 8-bit raster file, scaling stored values by 1/255 into [0, 1].

    Grayscale sources are promoted to three channels by replication; images
    with an alpha channel have it dropped. Raises FileNotFoundError for a
    missing file and ValueError for a file that is not a supported raster.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    try:
        with PILImage.open(path) as img:
            if img.mode == "L":
                gray = np.asarray(img, dtype=np.uint8)
                raw = np.stack([gray, gray, gray], axis=-1)
            else:
                raw = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ValueError(f"unsupported image format: {path}") from exc
    return Image(raw.astype(np.float64) / 255.0)


def save_image(img: Image, path: str | Path) -> None:
    """Write an Image as an 8-bit file (format from the extension, PNG default).

    Quantizes with round-half-up so a save/load round trip moves every value
    by at most 1/255.
    """
    path = Path(path)
    quantized = np.floor(img.pixels * 255.0 + 0.5).astype(np.uint8)
    out = PILImage.fromarray(quantized, mode="RGB")
    fmt = "PNG" if path.suffix == "" else None
    out.save(path, format=fmt)


def _bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resampling with half-pixel centers, edges clamped.

    No antialiasing filter: at an exact 2x downscale this reduces to the
    average of each 2x2 block, and at identity scale it is a no-op.
    """
    h, w = src.shape[:2]
    if (h, w) == (out_h, out_w):
        return src.copy()

    ry = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    rx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ry).astype(np.intp)
    x0 = np.floor(rx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ry - y0).reshape(-1, 1)
    fx = (rx - x0).reshape(1, -1)
    if src.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]

    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def center_crop_resize(img: Image, target: ImageDims) -> Image:
    """Crop the largest centered region with the target aspect ratio, then
    bilinear-resize it to the target size.

    An image already at the target dims comes back pixel-identical.
    """
    if target.channels != 3:
        raise ValueError("target dims must be 3-channel")
    h, w, _ = img.pixels.shape
    th, tw = target.height, target.width

    # Compare aspect ratios via cross products to stay in integer arithmetic.
    if w * th > h * tw:
        crop_h, crop_w = h, max(1, int(math.floor(h * tw / th + 0.5)))
    elif w * th < h * tw:
        crop_h, crop_w = max(1, int(math.floor(w * th / tw + 0.5))), w
    else:
        crop_h, crop_w = h, w
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    cropped = img.pixels[top : top + crop_h, left : left + crop_w]

    return Image(_bilinear_resize(cropped, th, tw))


def extract_channel(img: Image, channel: int) -> ChannelPlane:
    """Return one channel of a 3-channel image as a plane (0=red, 1=green, 2=blue)."""
    if channel not in (0, 1, 2):
        raise ValueError(f"channel index must be 0, 1 or 2, got {channel}")
    return ChannelPlane(img.pixels[:, :, channel].copy())
