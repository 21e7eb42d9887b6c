import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropuq.model import (
    BBox,
    Detection,
    RleMask,
    SampleSet,
    ScoreVector,
    box_iou,
    mask_iou,
    rasterize_box,
    rle_decode,
    rle_encode,
)

boxes = st.builds(
    lambda x1, y1, w, h: BBox(x1, y1, x1 + w, y1 + h),
    st.floats(-50, 500),
    st.floats(-50, 500),
    st.floats(0.5, 200),
    st.floats(0.5, 200),
)


class TestBBox:
    def test_invalid_boxes_rejected(self):
        with pytest.raises(ValueError):
            BBox(0, 0, 0, 10)
        with pytest.raises(ValueError):
            BBox(10, 0, 0, 10)
        with pytest.raises(ValueError):
            BBox(0, 0, float("nan"), 10)
        with pytest.raises(ValueError):
            BBox(0, 0, float("inf"), 10)

    def test_clamped(self):
        assert BBox(-5, -5, 15, 12).clamped(10, 10) == BBox(0, 0, 10, 10)

    def test_clamped_degenerate_rejected(self):
        with pytest.raises(ValueError):
            BBox(20, 20, 30, 30).clamped(10, 10)


class TestBoxIou:
    def test_identity(self):
        b = BBox(3, 4, 10, 12)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # intersection 5x10 = 50, union 100 + 100 - 50 = 150
        got = box_iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10))
        assert got == pytest.approx(50 / 150, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(boxes, boxes)
    def test_symmetry_and_bounds(self, a, b):
        ab = box_iou(a, b)
        assert ab == box_iou(b, a)
        assert 0.0 <= ab <= 1.0


class TestMaskIou:
    def test_identity_nonempty(self):
        m = rle_encode(np.eye(4, dtype=bool))
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((2, 5), dtype=bool)
        a[0] = True
        b = np.zeros((2, 5), dtype=bool)
        b[1] = True
        assert mask_iou(rle_encode(a), rle_encode(b)) == 0.0

    def test_half_overlap(self):
        # 4x4: left half (8 px) vs top half (8 px) -> 4 / 12
        left = np.zeros((4, 4), dtype=bool)
        left[:, :2] = True
        top = np.zeros((4, 4), dtype=bool)
        top[:2, :] = True
        assert mask_iou(rle_encode(left), rle_encode(top)) == pytest.approx(
            4 / 12, abs=1e-12
        )

    def test_both_empty_is_zero(self):
        e = RleMask(2, 2, (4,))
        assert mask_iou(e, e) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            mask_iou(RleMask(2, 2, (4,)), RleMask(2, 3, (6,)))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**16 - 1))
    def test_matches_pixel_count_oracle(self, bits):
        grid_a = np.array([(bits >> i) & 1 for i in range(16)], dtype=bool).reshape(4, 4)
        grid_b = np.array([(bits >> (15 - i)) & 1 for i in range(16)], dtype=bool).reshape(4, 4)
        inter = sum(
            1 for r in range(4) for c in range(4) if grid_a[r, c] and grid_b[r, c]
        )
        union = sum(
            1 for r in range(4) for c in range(4) if grid_a[r, c] or grid_b[r, c]
        )
        expect = inter / union if union else 0.0
        assert mask_iou(rle_encode(grid_a), rle_encode(grid_b)) == pytest.approx(
            expect, abs=1e-12
        )


class TestRle:
    def test_all_background(self):
        assert rle_encode(np.zeros((2, 2), dtype=bool)).runs == (4,)

    def test_all_foreground(self):
        assert rle_encode(np.ones((2, 2), dtype=bool)).runs == (0, 4)

    def test_checker(self):
        grid = np.array([[False, True], [True, False]])
        assert rle_encode(grid).runs == (1, 2, 1)

    def test_decode_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            RleMask(2, 2, (3,))

    def test_interior_zero_rejected(self):
        with pytest.raises(ValueError):
            RleMask(2, 2, (2, 0, 2))

    def test_leading_zero_allowed(self):
        m = RleMask(2, 2, (0, 4))
        assert m.foreground_count == 4

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_round_trip(self, data):
        h = data.draw(st.integers(1, 64))
        w = data.draw(st.integers(1, 64))
        bits = data.draw(st.binary(min_size=h * w, max_size=h * w))
        grid = (np.frombuffer(bits, dtype=np.uint8) > 127).reshape(h, w)
        assert np.array_equal(rle_decode(rle_encode(grid)), grid)


class TestRasterizeAgainstBoxIou:
    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_integer_boxes_match(self, data):
        # boxes aligned to the integer grid rasterize exactly, so the two
        # IoU routes agree within the pixel-boundary tolerance
        def int_box(lo, hi):
            x1 = data.draw(st.integers(lo, hi - 2))
            y1 = data.draw(st.integers(lo, hi - 2))
            x2 = data.draw(st.integers(x1 + 1, hi))
            y2 = data.draw(st.integers(y1 + 1, hi))
            return BBox(float(x1), float(y1), float(x2), float(y2))

        a = int_box(0, 24)
        b = int_box(0, 24)
        ma = rasterize_box(a, 24, 24)
        mb = rasterize_box(b, 24, 24)
        tol = 2.0 / min(2 * (a.width + a.height), 2 * (b.width + b.height))
        assert abs(box_iou(a, b) - mask_iou(ma, mb)) <= tol


class TestDomainTypes:
    def test_score_vector_checks_sum(self):
        with pytest.raises(ValueError):
            ScoreVector((0.5, 0.6))
        with pytest.raises(ValueError):
            ScoreVector((1.5, -0.5))
        assert ScoreVector((0.25, 0.75)).background == 0.25

    def test_sample_set_validates_repetition(self):
        det = Detection(BBox(0, 0, 5, 5), ScoreVector((0.5, 0.5)), None, repetition=3)
        with pytest.raises(ValueError):
            SampleSet("img", 10, 10, 2, (det,))

    def test_sample_set_validates_bounds(self):
        det = Detection(BBox(0, 0, 50, 5), ScoreVector((0.5, 0.5)), None, repetition=0)
        with pytest.raises(ValueError):
            SampleSet("img", 10, 10, 1, (det,))

    def test_sample_set_validates_mask_dims(self):
        det = Detection(
            BBox(0, 0, 5, 5), ScoreVector((0.5, 0.5)), RleMask(3, 3, (9,)), repetition=0
        )
        with pytest.raises(ValueError):
            SampleSet("img", 10, 10, 1, (det,))
