"""Procedural generator of canonical-size synthetic faces.

Stands in for externally generated face data at desk scale. Every sample is
a flat skin-tone field with darker eye and mouth rectangles plus per-pixel
Gaussian noise; rosacea-positive samples additionally get a red-channel
boost from Gaussian blobs over the cheeks, nose bridge and forehead, the
regions where erythema concentrates. The class signal is therefore purely
chromatic: with the blob amplitude at zero, positive and negative samples
are pixel-identical.

Determinism: each sample's RNG stream is derived by hashing (master seed,
split, index), so adding a split or enlarging another one never perturbs
existing samples. The noise stream does not depend on the label.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dataset import NEGATIVE, POSITIVE, SPLITS, LabeledDataset, load_split, save_split
from .image_core import CANONICAL_DIMS, Image, ImageDims
from .roi_mask import Box, LandmarkBoxes

__all__ = [
    "DEFAULT_FACE_PARAMS",
    "FaceParams",
    "SplitCounts",
    "gen_dataset",
    "gen_face",
    "load_generated",
    "write_generated",
]

MANIFEST_NAME = "manifest.json"

_SPLIT_CODES = {name: i for i, name in enumerate(SPLITS)}


def _snap(fraction: float, extent: int) -> int:
    # Round-half-up; round() would flip on .5 via banker's rounding.
    return int(math.floor(fraction * extent + 0.5))


@dataclass(frozen=True)
class FaceParams:
    """Generator knobs. Positions are fractions of (extent - 1) in (row, col)
    order; sizes are fractions of the extent. Defaults target 150x130 faces.
    """

    skin_tone: tuple[float, float, float] = (0.72, 0.55, 0.45)
    # Cheeks, nose bridge, forehead.
    blob_centers: tuple[tuple[float, float], ...] = (
        (0.55, 0.30),
        (0.55, 0.70),
        (0.50, 0.50),
        (0.22, 0.50),
    )
    blob_sigma: float = 12.0
    blob_amplitude: float = 0.25
    noise_std: float = 0.03
    # Identity features: (top, left, height, width) fractions + fill colors.
    left_eye: tuple[float, float, float, float] = (0.35, 0.215, 0.085, 0.145)
    right_eye: tuple[float, float, float, float] = (0.35, 0.645, 0.085, 0.145)
    mouth: tuple[float, float, float, float] = (0.72, 0.40, 0.085, 0.21)
    eye_color: tuple[float, float, float] = (0.25, 0.20, 0.18)
    mouth_color: tuple[float, float, float] = (0.45, 0.25, 0.25)
    dims: ImageDims = CANONICAL_DIMS

    def __post_init__(self) -> None:
        if self.blob_amplitude < 0:
            raise ValueError("blob_amplitude must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.blob_sigma <= 0:
            raise ValueError("blob_sigma must be > 0")
        for c in (*self.skin_tone, *self.eye_color, *self.mouth_color):
            if not 0.0 <= c <= 1.0:
                raise ValueError("color components must be within [0, 1]")
        self.landmark_boxes()  # validates geometry against dims

    def _box(self, spec: tuple[float, float, float, float]) -> Box:
        top_f, left_f, height_f, width_f = spec
        box = Box(
            top=_snap(top_f, self.dims.height - 1),
            left=_snap(left_f, self.dims.width - 1),
            height=max(1, _snap(height_f, self.dims.height)),
            width=max(1, _snap(width_f, self.dims.width)),
        )
        box.check_within(self.dims)
        return box

    def landmark_boxes(self) -> LandmarkBoxes:
        return LandmarkBoxes(
            left_eye=self._box(self.left_eye),
            right_eye=self._box(self.right_eye),
            mouth=self._box(self.mouth),
        )

    def blob_center_pixels(self) -> tuple[tuple[int, int], ...]:
        """Blob centers snapped to exact pixels (the boost peak locations)."""
        return tuple(
            (_snap(fr, self.dims.height - 1), _snap(fc, self.dims.width - 1))
            for fr, fc in self.blob_centers
        )

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["dims"] = {"height": self.dims.height, "width": self.dims.width}
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "FaceParams":
        def _tup(v):
            return tuple(_tup(x) for x in v) if isinstance(v, (list, tuple)) else v

        kwargs = {k: _tup(v) for k, v in raw.items() if k != "dims"}
        dims = ImageDims(height=raw["dims"]["height"], width=raw["dims"]["width"])
        return cls(dims=dims, **kwargs)


DEFAULT_FACE_PARAMS = FaceParams()


@dataclass(frozen=True)
class SplitCounts:
    """Per-split sample counts; defaults are the desk-scale experiment sizes."""

    train_pos: int = 250
    train_neg: int = 500
    val_pos: int = 50
    val_neg: int = 100
    test_pos: int = 50
    test_neg: int = 150

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")

    def for_split(self, split: str) -> tuple[int, int]:
        return getattr(self, f"{split}_pos"), getattr(self, f"{split}_neg")

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=8)
def _blob_field(params: FaceParams) -> np.ndarray:
    """Max-of-Gaussians red boost field in [0, 1], peak exactly 1 at each
    snapped center pixel."""
    h, w = params.dims.height, params.dims.width
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    field = np.zeros((h, w), dtype=np.float64)
    two_sigma_sq = 2.0 * params.blob_sigma**2
    for cr, cc in params.blob_center_pixels():
        d_sq = (rows - cr) ** 2 + (cols - cc) ** 2
        np.maximum(field, np.exp(-d_sq / two_sigma_sq), out=field)
    return field


def gen_face(seed: int, label: int, params: FaceParams = DEFAULT_FACE_PARAMS) -> Image:
    """Deterministic synthetic face for (seed, label, params).

    Composition order: skin field, eye/mouth rectangles, Gaussian noise,
    then (positives only) the red-channel blob boost, clamped to [0, 1].
    """
    if label not in (NEGATIVE, POSITIVE):
        raise ValueError(f"label must be 0 or 1, got {label}")
    h, w = params.dims.height, params.dims.width

    face = np.empty((h, w, 3), dtype=np.float64)
    face[:] = params.skin_tone
    boxes = params.landmark_boxes()
    for name, color in (("left_eye", params.eye_color), ("right_eye", params.eye_color), ("mouth", params.mouth_color)):
        ys, xs = boxes.named()[name].slices()
        face[ys, xs] = color

    rng = np.random.default_rng(seed)
    face += rng.normal(0.0, params.noise_std, size=(h, w, 3))

    if label == POSITIVE and params.blob_amplitude > 0:
        face[:, :, 0] += params.blob_amplitude * _blob_field(params)

    return Image(np.clip(face, 0.0, 1.0))


def _sample_seed(master_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(_SPLIT_CODES[split], index))
    return int(ss.generate_state(1, np.uint64)[0])


def _gen_split(master_seed: int, split: str, n_pos: int, n_neg: int, params: FaceParams) -> LabeledDataset:
    h, w = params.dims.height, params.dims.width
    n = n_pos + n_neg
    pixels = np.empty((n, h, w, 3), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for idx in range(n):
        label = POSITIVE if idx < n_pos else NEGATIVE
        img = gen_face(_sample_seed(master_seed, split, idx), label, params)
        pixels[idx] = img.pixels
        labels[idx] = label
    return LabeledDataset(pixels=pixels, labels=labels, split=split, landmarks=params.landmark_boxes())


def gen_dataset(
    seed: int,
    counts: SplitCounts = SplitCounts(),
    params: FaceParams = DEFAULT_FACE_PARAMS,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Generate the train/val/test splits; positives precede negatives."""
    return tuple(  # type: ignore[return-value]
        _gen_split(seed, split, *counts.for_split(split), params) for split in SPLITS
    )


def write_generated(
    root: str | Path,
    seed: int,
    counts: SplitCounts = SplitCounts(),
    params: FaceParams = DEFAULT_FACE_PARAMS,
) -> dict:
    """Generate all splits, save them as PNG trees plus a manifest JSON."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for split_data in gen_dataset(seed, counts, params):
        save_split(split_data, root)
    manifest = {
        "format_version": 1,
        "seed": seed,
        "counts": counts.to_dict(),
        "params": params.to_dict(),
        "landmarks": params.landmark_boxes().to_dict(),
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_generated(root: str | Path, split: str) -> tuple[LabeledDataset, dict]:
    """Load one split written by write_generated, with its manifest."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    landmarks = LandmarkBoxes.from_dict(manifest["landmarks"])
    return load_split(root, split, landmarks=landmarks), manifest
