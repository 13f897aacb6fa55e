from __future__ import annotations

import numpy as np
import pytest

from rosemask.dataset import LabeledDataset
from rosemask.image_core import Image


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240712)


def random_image(rng: np.random.Generator, h: int = 8, w: int = 6) -> Image:
    return Image(rng.random((h, w, 3)))


def dataset_from_pixels(pixels: np.ndarray, labels, split: str = "train") -> LabeledDataset:
    return LabeledDataset(pixels=np.asarray(pixels), labels=np.asarray(labels), split=split)
