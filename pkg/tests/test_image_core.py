from __future__ import annotations

import numpy as np
import pytest
from PIL import Image as PILImage

from rosemask.image_core import (
    CANONICAL_DIMS,
    ChannelPlane,
    Image,
    ImageDims,
    center_crop_resize,
    extract_channel,
    load_image,
    save_image,
)

from conftest import random_image


class TestImageDims:
    def test_canonical_is_portrait_150_by_130(self):
        assert (CANONICAL_DIMS.height, CANONICAL_DIMS.width, CANONICAL_DIMS.channels) == (150, 130, 3)

    @pytest.mark.parametrize("h,w,c", [(0, 5, 3), (5, 0, 3), (5, 5, 2), (5, 5, 4)])
    def test_invalid_dims_rejected(self, h, w, c):
        with pytest.raises(ValueError):
            ImageDims(height=h, width=w, channels=c)


class TestImageValidation:
    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            Image(np.full((2, 2, 3), 1.5))
        with pytest.raises(ValueError):
            Image(np.full((2, 2, 3), -0.1))

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            ChannelPlane(np.zeros((2, 2, 1)))

    def test_dims_property(self):
        img = Image(np.zeros((4, 7, 3)))
        assert img.dims == ImageDims(height=4, width=7, channels=3)


class TestLoadSave:
    def test_all_white_loads_as_ones(self, tmp_path):
        path = tmp_path / "white.png"
        PILImage.fromarray(np.full((2, 2, 3), 255, dtype=np.uint8)).save(path)
        assert np.array_equal(load_image(path).pixels, np.ones((2, 2, 3)))

    def test_all_black_loads_as_zeros(self, tmp_path):
        path = tmp_path / "black.png"
        PILImage.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(path)
        assert np.array_equal(load_image(path).pixels, np.zeros((2, 2, 3)))

    def test_mid_gray_scales_by_255(self, tmp_path):
        path = tmp_path / "mid.png"
        PILImage.fromarray(np.full((1, 1, 3), 128, dtype=np.uint8)).save(path)
        assert np.allclose(load_image(path).pixels, 128 / 255, atol=0, rtol=0)

    def test_grayscale_promoted_by_replication(self, tmp_path):
        path = tmp_path / "gray.png"
        gray = np.arange(6, dtype=np.uint8).reshape(2, 3) * 40
        PILImage.fromarray(gray, mode="L").save(path)
        img = load_image(path)
        assert img.dims.channels == 3
        for c in range(3):
            assert np.array_equal(img.pixels[:, :, c], gray / 255.0)

    def test_save_zeros_and_ones(self, tmp_path):
        for value, byte in ((0.0, 0), (1.0, 255)):
            path = tmp_path / f"v{byte}.png"
            save_image(Image(np.full((3, 3, 3), value)), path)
            assert (np.asarray(PILImage.open(path)) == byte).all()

    def test_round_trip_quantization_bound(self, tmp_path, rng):
        img = random_image(rng, 16, 12)
        path = tmp_path / "rt.png"
        save_image(img, path)
        back = load_image(path)
        assert np.abs(back.pixels - img.pixels).max() <= 1 / 255

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_non_image_file(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"this is not a png")
        with pytest.raises(ValueError):
            load_image(path)

    def test_jpeg_readable(self, tmp_path):
        path = tmp_path / "img.jpg"
        PILImage.fromarray(np.full((4, 4, 3), 200, dtype=np.uint8)).save(path, quality=95)
        img = load_image(path)
        assert img.dims == ImageDims(4, 4, 3)


def _bilinear_oracle(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Straight per-pixel half-pixel-center bilinear, loops only."""
    h, w = src.shape[:2]
    out = np.zeros((out_h, out_w, src.shape[2]))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = (
                src[y0, x0] * (1 - fy) * (1 - fx)
                + src[y0, x1] * (1 - fy) * fx
                + src[y1, x0] * fy * (1 - fx)
                + src[y1, x1] * fy * fx
            )
    return out


class TestCenterCropResize:
    def test_identity_at_target_dims(self, rng):
        img = random_image(rng, 10, 8)
        out = center_crop_resize(img, ImageDims(10, 8, 3))
        assert np.array_equal(out.pixels, img.pixels)

    def test_idempotent_at_target(self, rng):
        img = random_image(rng, 20, 14)
        target = ImageDims(10, 7, 3)
        once = center_crop_resize(img, target)
        twice = center_crop_resize(once, target)
        assert np.array_equal(once.pixels, twice.pixels)

    def test_exact_2x_downscale_is_box_average(self, rng):
        # Aspect ratios match (300x260 -> 150x130) so no crop happens and
        # half-pixel bilinear at 2x reduces to the 2x2 block mean.
        src = rng.random((300, 260, 3))
        out = center_crop_resize(Image(src), CANONICAL_DIMS)
        box = src.reshape(150, 2, 130, 2, 3).mean(axis=(1, 3))
        assert np.abs(out.pixels - box).max() < 1e-12

    def test_matches_independent_bilinear_oracle(self, rng):
        src = rng.random((9, 6, 3))
        out = center_crop_resize(Image(src), ImageDims(6, 4, 3))
        assert np.abs(out.pixels - _bilinear_oracle(src, 6, 4)).max() < 1e-12

    def test_crop_path_matches_manual_crop_then_resize(self, rng):
        # 20x20 source to 10x5 target: widest centered 20x10 region first.
        src = rng.random((20, 20, 3))
        out = center_crop_resize(Image(src), ImageDims(10, 5, 3))
        cropped = src[:, 5:15]
        assert np.abs(out.pixels - _bilinear_oracle(cropped, 10, 5)).max() < 1e-12

    def test_uniform_image_stays_uniform(self):
        img = Image(np.full((17, 11, 3), 0.37))
        out = center_crop_resize(img, ImageDims(5, 9, 3))
        assert np.allclose(out.pixels, 0.37, atol=1e-12)

    def test_zero_dimension_target_rejected(self):
        with pytest.raises(ValueError):
            ImageDims(0, 10, 3)


class TestExtractChannel:
    def test_pure_red(self):
        img = Image(np.tile([1.0, 0.0, 0.0], (3, 4, 1)))
        assert np.array_equal(extract_channel(img, 0).values, np.ones((3, 4)))
        assert np.array_equal(extract_channel(img, 1).values, np.zeros((3, 4)))

    def test_pure_blue_red_channel_zero(self):
        img = Image(np.tile([0.0, 0.0, 1.0], (2, 2, 1)))
        assert np.array_equal(extract_channel(img, 0).values, np.zeros((2, 2)))

    def test_pointwise_against_direct_indexing(self, rng):
        img = random_image(rng, 7, 5)
        for c in range(3):
            plane = extract_channel(img, c)
            for i in range(7):
                for j in range(5):
                    assert plane.values[i, j] == img.pixels[i, j, c]

    def test_row_major_order_preserved(self, rng):
        img = random_image(rng, 4, 6)
        plane = extract_channel(img, 2)
        assert np.array_equal(plane.values.ravel(), img.pixels[:, :, 2].ravel())

    def test_bad_channel_index(self, rng):
        with pytest.raises(ValueError):
            extract_channel(random_image(rng), 3)
