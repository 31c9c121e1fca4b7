import math

import numpy as np
import pytest

from tubekit.geometry import (
    MAX_SCALE_DELTA,
    BoundingBox,
    BoxDelta,
    clip,
    decode_delta,
    encode_delta,
    iou,
    iou_matrix,
    nms,
)


def random_box(rng, lo=0.0, hi=100.0, min_size=1.0, max_size=40.0):
    x1 = rng.uniform(lo, hi)
    y1 = rng.uniform(lo, hi)
    return BoundingBox(
        x1, y1, x1 + rng.uniform(min_size, max_size), y1 + rng.uniform(min_size, max_size)
    )


class TestBoundingBox:
    def test_properties(self):
        box = BoundingBox(1.0, 2.0, 5.0, 10.0)
        assert box.width == 4.0
        assert box.height == 8.0
        assert box.area == 32.0
        assert box.center == (3.0, 6.0)

    def test_zero_area_allowed(self):
        box = BoundingBox(3.0, 3.0, 3.0, 3.0)
        assert box.area == 0.0

    def test_inverted_corners_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(5.0, 0.0, 4.0, 10.0)
        with pytest.raises(ValueError):
            BoundingBox(0.0, 5.0, 10.0, 4.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(0.0, 0.0, float("nan"), 10.0)
        with pytest.raises(ValueError):
            BoundingBox(0.0, float("inf"), 10.0, 10.0)


class TestIoU:
    def test_identity(self):
        a = BoundingBox(0, 0, 10, 10)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # intersection 5*10 = 50, union 100 + 100 - 50 = 150
        value = iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 15, 10))
        assert value == pytest.approx(50.0 / 150.0)

    def test_degenerate_boxes(self):
        point = BoundingBox(5, 5, 5, 5)
        assert iou(point, point) == 0.0
        assert iou(point, BoundingBox(0, 0, 10, 10)) == 0.0

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            ab, ba = iou(a, b), iou(b, a)
            assert ab == ba
            assert 0.0 <= ab <= 1.0

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(5)
        boxes_a = [random_box(rng) for _ in range(7)]
        boxes_b = [random_box(rng) for _ in range(9)]
        mat = iou_matrix(boxes_a, boxes_b)
        assert mat.shape == (7, 9)
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                np.testing.assert_allclose(mat[i, j], iou(a, b), rtol=1e-12)

    def test_matrix_empty(self):
        assert iou_matrix([], [BoundingBox(0, 0, 1, 1)]).shape == (0, 1)
        assert iou_matrix([BoundingBox(0, 0, 1, 1)], []).shape == (1, 0)


class TestEncodeDecode:
    def test_encode_identity(self):
        box = BoundingBox(3, 4, 13, 24)
        assert encode_delta(box, box) == BoxDelta(0.0, 0.0, 0.0, 0.0)

    def test_encode_shift(self):
        delta = encode_delta(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 15, 15))
        assert delta == BoxDelta(0.5, 0.5, 0.0, 0.0)

    def test_encode_rejects_degenerate(self):
        flat = BoundingBox(0, 0, 10, 0)
        good = BoundingBox(0, 0, 10, 10)
        with pytest.raises(ValueError):
            encode_delta(flat, good)
        with pytest.raises(ValueError):
            encode_delta(good, flat)

    def test_decode_identity(self):
        box = BoundingBox(2, 3, 9, 8)
        assert decode_delta(box, BoxDelta(0, 0, 0, 0)) == box

    def test_decode_shift(self):
        out = decode_delta(BoundingBox(0, 0, 10, 10), BoxDelta(0.5, 0.5, 0.0, 0.0))
        np.testing.assert_allclose(out.as_tuple(), (5, 5, 15, 15), atol=1e-12)

    def test_decode_doubling(self):
        out = decode_delta(
            BoundingBox(0, 0, 10, 10), BoxDelta(0.0, 0.0, math.log(2), math.log(2))
        )
        np.testing.assert_allclose(out.as_tuple(), (-5, -5, 15, 15), atol=1e-12)

    def test_decode_overflow_guard(self):
        box = BoundingBox(0, 0, 10, 10)
        with pytest.raises(ValueError):
            decode_delta(box, BoxDelta(0, 0, MAX_SCALE_DELTA + 0.1, 0))
        with pytest.raises(ValueError):
            decode_delta(box, BoxDelta(0, 0, 0, -MAX_SCALE_DELTA - 0.1))

    def test_round_trip(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(300):
            source = random_box(rng)
            target = random_box(rng)
            recovered = decode_delta(source, encode_delta(source, target))
            worst = max(
                worst,
                max(
                    abs(r - t)
                    for r, t in zip(recovered.as_tuple(), target.as_tuple())
                ),
            )
        assert worst < 1e-9


class TestClip:
    def test_clamp(self):
        out = clip(BoundingBox(-5, -5, 15, 15), 10, 10)
        assert out == BoundingBox(0, 0, 10, 10)

    def test_interior_untouched(self):
        box = BoundingBox(1, 1, 4, 4)
        assert clip(box, 10, 10) == box

    def test_fully_outside_collapses(self):
        out = clip(BoundingBox(20, 20, 30, 30), 10, 10)
        assert out.area == 0.0
        assert out == BoundingBox(10, 10, 10, 10)

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            clip(BoundingBox(0, 0, 1, 1), 0, 10)


def brute_force_nms(dets, threshold):
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    kept = []
    for i in order:
        if all(iou(dets[i][0], dets[k][0]) <= threshold for k in kept):
            kept.append(i)
    return kept


class TestNms:
    def test_single_box(self):
        assert nms([(BoundingBox(0, 0, 10, 10), 0.5)], 0.5) == [0]

    def test_duplicate_suppressed(self):
        box = BoundingBox(0, 0, 10, 10)
        assert nms([(box, 0.9), (box, 0.8)], 0.5) == [0]
        # and the higher score wins regardless of input order
        assert nms([(box, 0.8), (box, 0.9)], 0.5) == [1]

    def test_equal_scores_keep_lower_index(self):
        box = BoundingBox(0, 0, 10, 10)
        assert nms([(box, 0.7), (box, 0.7)], 0.5) == [0]

    def test_threshold_one_keeps_everything_but_exact_duplicates(self):
        a = BoundingBox(0, 0, 10, 10)
        b = BoundingBox(1, 0, 11, 10)
        # IoU(a, b) < 1 so both survive threshold 1.0
        assert sorted(nms([(a, 0.9), (b, 0.8)], 1.0)) == [0, 1]

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            nms([(BoundingBox(0, 0, 1, 1), 0.5)], 1.5)

    def test_empty(self):
        assert nms([], 0.5) == []

    def test_matches_brute_force(self):
        rng = np.random.default_rng(123)
        for trial in range(100):
            n = int(rng.integers(1, 9))
            boxes = [random_box(rng, hi=30.0, max_size=25.0) for _ in range(n)]
            # quantized scores to exercise ties, occasional duplicated boxes
            scores = [float(rng.integers(0, 5)) / 4.0 for _ in range(n)]
            if n >= 2 and trial % 3 == 0:
                boxes[1] = boxes[0]
            dets = list(zip(boxes, scores))
            threshold = float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]))
            assert nms(dets, threshold) == brute_force_nms(dets, threshold)

    def test_kept_invariants(self):
        rng = np.random.default_rng(7)
        boxes = [random_box(rng, hi=40.0) for _ in range(50)]
        scores = [float(rng.uniform(0, 1)) for _ in range(50)]
        dets = list(zip(boxes, scores))
        kept = nms(dets, 0.5)
        kept_scores = [scores[i] for i in kept]
        assert kept_scores == sorted(kept_scores, reverse=True)
        for i in kept:
            for j in kept:
                if i != j:
                    assert iou(boxes[i], boxes[j]) <= 0.5
