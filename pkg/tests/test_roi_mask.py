from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosemask.dataset import LabeledDataset
from rosemask.image_core import Image, ImageDims
from rosemask.roi_mask import (
    BinaryMask,
    Box,
    LandmarkBoxes,
    MaskSpec,
    apply_mask,
    build_mask,
    load_mask,
    load_mask_report,
    mask_dataset,
    mean_face,
    privacy_audit,
    save_mask,
    save_mask_report,
    select_top_k,
    top_k_count,
)

from conftest import dataset_from_pixels, random_image


def brute_force_top_k(values: np.ndarray, k: int) -> set[int]:
    """Independent oracle: sort all (value, index) pairs, take the first k.

    Highest value first; among equal values the earlier row-major index wins.
    """
    flat = list(values.ravel())
    ranked = sorted(range(len(flat)), key=lambda i: (-flat[i], i))
    return set(ranked[:k])


def plane_dataset(plane: np.ndarray, split: str = "train") -> LabeledDataset:
    """Single positive image whose red channel is the given plane."""
    h, w = plane.shape
    pixels = np.zeros((1, h, w, 3))
    pixels[0, :, :, 0] = plane
    return dataset_from_pixels(pixels, [1], split)


class TestTopKCount:
    def test_exact_at_canonical_dims(self):
        dims = ImageDims(150, 130, 3)
        for t in range(20, 36):
            assert top_k_count(float(t), dims) == t * 195

    def test_float_percent_does_not_round_up(self):
        # 0.29 * 19500 evaluates to 5655.000000000001 in floats; the exact
        # rational value is 5655 and must not become 5656.
        assert top_k_count(29.0, ImageDims(150, 130, 3)) == 5655

    def test_full_selection(self):
        assert top_k_count(100.0, ImageDims(4, 4, 3)) == 16

    def test_tiny_percent_selects_one(self):
        assert top_k_count(0.001, ImageDims(4, 4, 3)) == 1

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            top_k_count(0.0, ImageDims(4, 4, 3))
        with pytest.raises(ValueError):
            top_k_count(100.5, ImageDims(4, 4, 3))


class TestMeanFace:
    def test_single_image_unchanged(self, rng):
        img = random_image(rng, 5, 4)
        data = dataset_from_pixels(img.pixels[None], [1])
        assert np.array_equal(mean_face(data).pixels, img.pixels)

    def test_two_image_mean_pointwise(self, rng):
        a, b = rng.random((5, 4, 3)), rng.random((5, 4, 3))
        data = dataset_from_pixels(np.stack([a, b]), [1, 1])
        assert np.allclose(mean_face(data).pixels, (a + b) / 2, atol=1e-15)

    def test_matches_accumulate_then_divide_oracle(self, rng):
        imgs = rng.random((5, 6, 7, 3))
        data = dataset_from_pixels(imgs, [1] * 5)
        acc = np.zeros((6, 7, 3))
        for i in range(5):
            acc += imgs[i]
        assert np.abs(mean_face(data).pixels - acc / 5).max() < 1e-12

    def test_negatives_ignored(self, rng):
        pos = rng.random((2, 4, 4, 3))
        neg = np.ones((1, 4, 4, 3))
        data = dataset_from_pixels(np.concatenate([pos, neg]), [1, 1, 0])
        assert np.allclose(mean_face(data).pixels, pos.mean(axis=0), atol=1e-15)

    def test_no_positives_rejected(self, rng):
        data = dataset_from_pixels(rng.random((2, 4, 4, 3)), [0, 0])
        with pytest.raises(ValueError):
            mean_face(data)


class TestBuildMask:
    def test_2x2_quarter_selects_single_max(self):
        plane = np.array([[10, 20], [30, 40]]) / 255.0
        mask, report = build_mask(plane_dataset(plane), MaskSpec(25.0, ImageDims(2, 2, 3)))
        assert np.array_equal(mask.bits, [[0, 0], [0, 1]])
        assert report.threshold_value == 40 / 255.0
        assert mask.selected_count == 1

    def test_2x2_all_equal_row_major_tie_break(self):
        plane = np.full((2, 2), 0.5)
        mask, report = build_mask(plane_dataset(plane), MaskSpec(50.0, ImageDims(2, 2, 3)))
        assert np.array_equal(mask.bits, [[1, 1], [0, 0]])
        assert report.tie_count_at_threshold == 4

    def test_full_percent_selects_everything(self, rng):
        plane = rng.random((3, 5))
        mask, report = build_mask(plane_dataset(plane), MaskSpec(100.0, ImageDims(3, 5, 3)))
        assert mask.bits.all()
        assert report.retention_fraction == 1.0

    @pytest.mark.parametrize("t", [1.0, 17.0, 25.0, 29.0, 50.0, 99.0, 100.0])
    def test_matches_brute_force_oracle(self, rng, t):
        for _ in range(40):
            h, w = rng.integers(1, 17, size=2)
            plane = rng.random((h, w))
            mask, _ = build_mask(plane_dataset(plane), MaskSpec(t, ImageDims(h, w, 3)))
            k = top_k_count(t, ImageDims(h, w, 3))
            assert set(np.flatnonzero(mask.bits.ravel())) == brute_force_top_k(plane, k)

    def test_matches_oracle_on_heavily_tied_planes(self, rng):
        for t in (25.0, 50.0, 75.0):
            for _ in range(20):
                h, w = rng.integers(2, 9, size=2)
                plane = rng.integers(0, 3, size=(h, w)) / 2.0  # values from {0, .5, 1}
                mask, _ = build_mask(plane_dataset(plane), MaskSpec(t, ImageDims(h, w, 3)))
                k = top_k_count(t, ImageDims(h, w, 3))
                assert set(np.flatnonzero(mask.bits.ravel())) == brute_force_top_k(plane, k)

    def test_exact_retention_for_every_t(self, rng):
        plane = rng.random((10, 13))
        data = plane_dataset(plane)
        hw = 130
        for t in range(1, 101):
            mask, report = build_mask(data, MaskSpec(float(t), ImageDims(10, 13, 3)))
            expected = math.ceil(t * hw / 100)
            assert mask.selected_count == expected
            assert report.retention_fraction == expected / hw

    def test_monotone_nesting(self, rng):
        data = plane_dataset(rng.random((8, 8)))
        previous = None
        for t in range(5, 101, 5):
            mask, _ = build_mask(data, MaskSpec(float(t), ImageDims(8, 8, 3)))
            selected = set(np.flatnonzero(mask.bits.ravel()))
            if previous is not None:
                assert previous <= selected
            previous = selected

    def test_threshold_consistency(self, rng):
        plane = rng.random((6, 6))
        mask, report = build_mask(plane_dataset(plane), MaskSpec(40.0, ImageDims(6, 6, 3)))
        flat = plane.ravel()
        selected = mask.bits.ravel().astype(bool)
        assert (flat[selected] >= report.threshold_value).all()
        assert (flat[~selected] <= report.threshold_value).all()

    def test_scale_equivariance_of_selected_set(self, rng):
        pixels = rng.random((4, 7, 7, 3))
        data = dataset_from_pixels(pixels, [1] * 4)
        spec = MaskSpec(30.0, ImageDims(7, 7, 3))
        mask_full, report_full = build_mask(data, spec)
        for c in (0.25, 0.5, 0.9):
            scaled = pixels.copy()
            scaled[:, :, :, 0] *= c
            mask_c, report_c = build_mask(dataset_from_pixels(scaled, [1] * 4), spec)
            assert np.array_equal(mask_c.bits, mask_full.bits)
            assert report_c.threshold_value == pytest.approx(c * report_full.threshold_value, rel=1e-12)

    def test_rejects_val_and_test_splits(self, rng):
        for split in ("val", "test"):
            data = dataset_from_pixels(rng.random((2, 4, 4, 3)), [1, 1], split)
            with pytest.raises(ValueError, match="train split"):
                build_mask(data, MaskSpec(50.0, ImageDims(4, 4, 3)))

    def test_rejects_dim_mismatch(self, rng):
        data = dataset_from_pixels(rng.random((2, 4, 4, 3)), [1, 1])
        with pytest.raises(ValueError):
            build_mask(data, MaskSpec(50.0, ImageDims(5, 4, 3)))

    @settings(max_examples=60, deadline=None)
    @given(
        values=st.lists(st.integers(min_value=0, max_value=6), min_size=1, max_size=64),
        t=st.floats(min_value=0.5, max_value=100.0, allow_nan=False),
    )
    def test_select_top_k_property(self, values, t):
        plane = np.array(values, dtype=np.float64) / 6.0
        k = max(1, min(len(values), math.ceil(t * len(values) / 100)))
        assert set(select_top_k(plane, k)) == brute_force_top_k(plane, k)


class TestApplyMask:
    def test_all_ones_identity(self, rng):
        img = random_image(rng, 5, 6)
        mask = BinaryMask(np.ones((5, 6), dtype=np.uint8))
        assert np.array_equal(apply_mask(img, mask).pixels, img.pixels)

    def test_all_zeros_annihilator(self, rng):
        img = random_image(rng, 5, 6)
        mask = BinaryMask(np.zeros((5, 6), dtype=np.uint8))
        assert np.array_equal(apply_mask(img, mask).pixels, np.zeros((5, 6, 3)))

    def test_pointwise_product(self, rng):
        img = random_image(rng, 4, 4)
        mask = BinaryMask(rng.integers(0, 2, size=(4, 4)).astype(np.uint8))
        out = apply_mask(img, mask)
        for i in range(4):
            for j in range(4):
                for c in range(3):
                    assert out.pixels[i, j, c] == img.pixels[i, j, c] * mask.bits[i, j]

    def test_idempotent(self, rng):
        img = random_image(rng, 6, 3)
        mask = BinaryMask(rng.integers(0, 2, size=(6, 3)).astype(np.uint8))
        once = apply_mask(img, mask)
        assert np.array_equal(apply_mask(once, mask).pixels, once.pixels)

    def test_dim_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            apply_mask(random_image(rng, 4, 4), BinaryMask(np.ones((5, 4), dtype=np.uint8)))


class TestMaskDataset:
    def test_empty_dataset_passthrough(self):
        empty = LabeledDataset(np.zeros((0, 4, 4, 3)), np.zeros(0, dtype=int), "train")
        out = mask_dataset(empty, BinaryMask(np.ones((4, 4), dtype=np.uint8)))
        assert len(out) == 0

    def test_all_ones_mask_leaves_images(self, rng):
        data = dataset_from_pixels(rng.random((3, 4, 4, 3)), [0, 1, 0])
        out = mask_dataset(data, BinaryMask(np.ones((4, 4), dtype=np.uint8)))
        assert np.array_equal(out.pixels, data.pixels)
        assert np.array_equal(out.labels, data.labels)

    def test_each_sample_equals_individual_apply(self, rng):
        data = dataset_from_pixels(rng.random((3, 5, 4, 3)), [1, 0, 1])
        mask = BinaryMask(rng.integers(0, 2, size=(5, 4)).astype(np.uint8))
        out = mask_dataset(data, mask)
        for i in range(3):
            assert np.array_equal(out.pixels[i], apply_mask(data.image(i), mask).pixels)
        assert out.split == data.split


class TestPrivacyAudit:
    BOXES = LandmarkBoxes(
        left_eye=Box(1, 1, 2, 2),
        right_eye=Box(1, 5, 2, 2),
        mouth=Box(5, 2, 2, 4),
    )

    def test_all_zeros_mask(self):
        audit = privacy_audit(BinaryMask(np.zeros((8, 8), dtype=np.uint8)), self.BOXES)
        assert audit.overall == 0.0
        assert all(v == 0.0 for v in audit.per_box.values())

    def test_all_ones_mask(self):
        audit = privacy_audit(BinaryMask(np.ones((8, 8), dtype=np.uint8)), self.BOXES)
        assert audit.overall == 1.0
        assert all(v == 1.0 for v in audit.per_box.values())

    def test_checkerboard_over_even_boxes(self):
        bits = np.indices((8, 8)).sum(axis=0) % 2
        audit = privacy_audit(BinaryMask(bits.astype(np.uint8)), self.BOXES)
        assert audit.per_box["left_eye"] == 0.5
        assert audit.per_box["mouth"] == 0.5
        assert audit.overall == 0.5

    def test_out_of_bounds_box_rejected(self):
        boxes = LandmarkBoxes(
            left_eye=Box(1, 1, 2, 2), right_eye=Box(1, 5, 2, 2), mouth=Box(7, 2, 3, 4)
        )
        with pytest.raises(ValueError):
            privacy_audit(BinaryMask(np.zeros((8, 8), dtype=np.uint8)), boxes)

    def test_empty_box_rejected(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0, 3)


class TestMaskIO:
    def test_png_round_trip(self, tmp_path, rng):
        mask = BinaryMask(rng.integers(0, 2, size=(9, 7)).astype(np.uint8))
        path = tmp_path / "mask.png"
        save_mask(mask, path)
        assert np.array_equal(load_mask(path).bits, mask.bits)

    def test_png_values_are_0_or_255(self, tmp_path):
        from PIL import Image as PILImage

        mask = BinaryMask(np.eye(4, dtype=np.uint8))
        path = tmp_path / "mask.png"
        save_mask(mask, path)
        raw = np.asarray(PILImage.open(path))
        assert set(np.unique(raw)) == {0, 255}

    def test_rejects_non_binary_png(self, tmp_path):
        from PIL import Image as PILImage

        path = tmp_path / "gray.png"
        PILImage.fromarray(np.full((4, 4), 128, dtype=np.uint8), mode="L").save(path)
        with pytest.raises(ValueError):
            load_mask(path)

    def test_report_json_round_trip(self, tmp_path, rng):
        data = plane_dataset(rng.random((6, 5)))
        _, report = build_mask(data, MaskSpec(37.5, ImageDims(6, 5, 3)))
        path = tmp_path / "report.json"
        save_mask_report(report, path)
        back = load_mask_report(path)
        assert back == report
        keys = set(json.loads(path.read_text()))
        assert keys == {"top_percent", "threshold_value", "retention_fraction",
                        "tie_count_at_threshold", "dims"}

    def test_mask_hash_stable(self, rng):
        bits = rng.integers(0, 2, size=(5, 5)).astype(np.uint8)
        assert BinaryMask(bits).sha256() == BinaryMask(bits.copy()).sha256()
