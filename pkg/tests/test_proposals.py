import math

import numpy as np
import pytest

from tubekit.geometry import ZERO_DELTA, BoundingBox, BoxDelta, encode_delta, iou
from tubekit.proposals import (
    AnchorConfig,
    ProposalStage,
    assign_samples,
    cascade_refine,
    generate_anchors,
    recall_at_iou,
    refine_stage,
    sample_minibatch,
    single_stage_refine,
)

IDENTITY_STAGE = ProposalStage(regressor=lambda b: ZERO_DELTA, scorer=lambda b: 0.5)


def test_anchor_grid_count():
    config = AnchorConfig(stride=16, scales=(128.0, 256.0, 512.0), ratios=(0.5, 1.0, 2.0))
    anchors = generate_anchors(64, 64, config)
    assert len(anchors) == 4 * 4 * 9  # 144


def test_anchor_grid_ceil_division():
    config = AnchorConfig(stride=16, scales=(32.0,), ratios=(1.0,))
    # 65 px needs 5 cells of stride 16
    assert len(generate_anchors(65, 16, config)) == 5


def test_first_anchor_center_and_shape():
    config = AnchorConfig(stride=16, scales=(128.0,), ratios=(1.0,))
    first = generate_anchors(64, 64, config)[0]
    assert first.center == (8.0, 8.0)
    assert first.width == pytest.approx(128.0)
    assert first.height == pytest.approx(128.0)
    # unclipped: extends outside the image
    assert first.x1 < 0


def test_anchor_aspect_ratios():
    config = AnchorConfig(stride=16, scales=(100.0,), ratios=(0.25, 4.0))
    quarter, quadruple = generate_anchors(16, 16, config)[:2]
    # h = s * sqrt(r), w = s / sqrt(r)
    assert quarter.height == pytest.approx(50.0)
    assert quarter.width == pytest.approx(200.0)
    assert quadruple.height == pytest.approx(200.0)
    assert quadruple.width == pytest.approx(50.0)
    # area is scale**2 for every ratio
    assert quarter.area == pytest.approx(100.0**2)


def test_anchor_ordering_scales_outer_ratios_inner():
    config = AnchorConfig(stride=16, scales=(64.0, 128.0), ratios=(1.0, 2.0))
    anchors = generate_anchors(16, 16, config)
    heights = [a.height for a in anchors[:4]]
    expected = [
        64.0,
        64.0 * math.sqrt(2.0),
        128.0,
        128.0 * math.sqrt(2.0),
    ]
    np.testing.assert_allclose(heights, expected)


def test_anchor_config_validation():
    with pytest.raises(ValueError):
        AnchorConfig(stride=0)
    with pytest.raises(ValueError):
        AnchorConfig(scales=())
    with pytest.raises(ValueError):
        AnchorConfig(ratios=(1.0, -2.0))


def test_refine_stage_clips_and_drops():
    stage = ProposalStage(regressor=lambda b: BoxDelta(5.0, 0.0, 0.0, 0.0), scorer=lambda b: 1.0)
    # shifted fully outside -> clipped to zero area -> dropped
    out = refine_stage([BoundingBox(0, 0, 10, 10)], stage, image_width=20, image_height=20)
    assert out == []


def test_refine_stage_scores_refined_box():
    target = BoundingBox(5, 5, 15, 15)
    stage = ProposalStage(
        regressor=lambda b: encode_delta(b, target),
        scorer=lambda b: iou(b, target),
    )
    out = refine_stage([BoundingBox(0, 0, 10, 10)], stage, image_width=100, image_height=100)
    assert len(out) == 1
    box, score = out[0]
    assert score == pytest.approx(1.0)
    np.testing.assert_allclose(box.as_tuple(), target.as_tuple(), atol=1e-9)


def test_refine_stage_rejects_bad_score():
    stage = ProposalStage(regressor=lambda b: ZERO_DELTA, scorer=lambda b: 1.5)
    with pytest.raises(ValueError):
        refine_stage([BoundingBox(0, 0, 10, 10)], stage, image_width=20, image_height=20)


def test_cascade_with_identity_second_stage_matches_single():
    rng = np.random.default_rng(3)
    anchors = []
    for _ in range(40):
        x1, y1 = rng.uniform(0, 80, size=2)
        anchors.append(BoundingBox(x1, y1, x1 + rng.uniform(5, 30), y1 + rng.uniform(5, 30)))
    scorer = lambda b: min(1.0, b.area / 1000.0)
    stage = ProposalStage(regressor=lambda b: ZERO_DELTA, scorer=scorer)
    single = single_stage_refine(anchors, stage, image_width=100, image_height=100, top_n=10)
    double = cascade_refine(
        anchors, stage, stage, image_width=100, image_height=100, top_n=10
    )
    assert len(double) == len(single)
    # identical up to the center/size round-trip each refinement applies
    np.testing.assert_allclose(
        [b.as_tuple() for b, _ in double],
        [b.as_tuple() for b, _ in single],
        atol=1e-9,
    )
    np.testing.assert_allclose(
        [s for _, s in double], [s for _, s in single], atol=1e-9
    )


def test_cascade_reports_second_stage_scores():
    stage_a = ProposalStage(regressor=lambda b: ZERO_DELTA, scorer=lambda b: 0.2)
    stage_b = ProposalStage(regressor=lambda b: ZERO_DELTA, scorer=lambda b: 0.9)
    out = cascade_refine(
        [BoundingBox(0, 0, 10, 10)], stage_a, stage_b, image_width=20, image_height=20
    )
    assert [s for _, s in out] == [0.9]


def halving_regressor(target):
    def regress(box):
        cx, cy = box.center
        tx, ty = target.center
        mid = BoundingBox(
            (box.x1 + target.x1) / 2,
            (box.y1 + target.y1) / 2,
            (box.x2 + target.x2) / 2,
            (box.y2 + target.y2) / 2,
        )
        return encode_delta(box, mid)

    return regress


def test_each_stage_halves_the_corner_error():
    target = BoundingBox(40, 40, 80, 80)
    start = BoundingBox(32, 32, 72, 72)  # corner error 8 everywhere
    stage = ProposalStage(regressor=halving_regressor(target), scorer=lambda b: 0.5)
    once = single_stage_refine([start], stage, image_width=200, image_height=200)
    twice = cascade_refine([start], stage, stage, image_width=200, image_height=200)

    def err(box):
        return max(abs(a - b) for a, b in zip(box.as_tuple(), target.as_tuple()))

    assert err(start) == pytest.approx(8.0)
    assert err(once[0][0]) == pytest.approx(4.0, abs=1e-9)
    assert err(twice[0][0]) == pytest.approx(2.0, abs=1e-9)


class TestAssignSamples:
    def test_thresholds(self):
        gt = [BoundingBox(0, 0, 10, 10)]
        candidates = [
            BoundingBox(0, 0, 10, 10),  # IoU 1.0 -> positive
            BoundingBox(0, 0, 10, 5),  # IoU 0.5 -> ignored
            BoundingBox(50, 50, 60, 60),  # IoU 0.0 -> negative
        ]
        out = assign_samples(candidates, gt)
        assert out.labels.tolist() == [1, -1, 0]
        assert out.matched_gt[0] == 0
        assert out.max_iou[2] == 0.0

    def test_best_candidate_override(self):
        # nobody clears 0.7, but the best available candidate per gt is
        # promoted anyway
        gt = [BoundingBox(0, 0, 10, 10)]
        candidates = [BoundingBox(0, 0, 10, 5), BoundingBox(0, 0, 10, 4)]
        out = assign_samples(candidates, gt)
        assert out.labels.tolist() == [1, -1]
        assert out.matched_gt[0] == 0

    def test_override_keeps_ties(self):
        gt = [BoundingBox(0, 0, 10, 10)]
        half = BoundingBox(0, 0, 10, 5)
        out = assign_samples([half, half], gt)
        assert out.labels.tolist() == [1, 1]

    def test_override_skips_untouched_gt(self):
        gt = [BoundingBox(100, 100, 110, 110)]
        out = assign_samples([BoundingBox(0, 0, 10, 10)], gt)
        # zero overlap everywhere: nothing to promote
        assert out.labels.tolist() == [0]

    def test_empty_ground_truth(self):
        out = assign_samples([BoundingBox(0, 0, 10, 10)], [])
        assert out.labels.tolist() == [0]
        assert out.matched_gt.tolist() == [-1]

    def test_every_visible_gt_gets_a_positive(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            gts = []
            for _ in range(4):
                x1, y1 = rng.uniform(0, 60, size=2)
                gts.append(BoundingBox(x1, y1, x1 + rng.uniform(8, 30), y1 + rng.uniform(8, 30)))
            candidates = []
            for g in gts:
                jit = rng.normal(0, 6, size=4)
                x1 = min(g.x1 + jit[0], g.x2 + jit[2])
                x2 = max(g.x1 + jit[0], g.x2 + jit[2])
                y1 = min(g.y1 + jit[1], g.y2 + jit[3])
                y2 = max(g.y1 + jit[1], g.y2 + jit[3])
                candidates.append(BoundingBox(x1, y1, x2, y2))
            out = assign_samples(candidates, gts)
            for j, g in enumerate(gts):
                overlaps = [iou(c, g) for c in candidates]
                best = max(overlaps)
                if best > 0.0:
                    best_rows = [i for i, v in enumerate(overlaps) if v == best]
                    assert all(out.labels[i] == 1 for i in best_rows)

    def test_threshold_order_validated(self):
        with pytest.raises(ValueError):
            assign_samples(
                [BoundingBox(0, 0, 1, 1)],
                [BoundingBox(0, 0, 1, 1)],
                positive_threshold=0.3,
                negative_threshold=0.7,
            )


def make_assignment(n_pos, n_neg, n_ignore=0):
    labels = np.array([1] * n_pos + [0] * n_neg + [-1] * n_ignore, dtype=np.int8)
    n = len(labels)
    from tubekit.proposals import SampleAssignment

    return SampleAssignment(
        labels=labels,
        matched_gt=np.zeros(n, dtype=np.int64),
        max_iou=np.zeros(n, dtype=np.float64),
    )


class TestMiniBatch:
    def test_plentiful_pools_split_evenly(self):
        rng = np.random.default_rng(0)
        batch = sample_minibatch(make_assignment(200, 200), rng)
        assert len(batch.positives) == 64
        assert len(batch.negatives) == 64
        assert batch.size == 128
        assert batch.ratio == 1.0

    def test_scarce_positives_shrink_negatives(self):
        rng = np.random.default_rng(0)
        batch = sample_minibatch(make_assignment(10, 1000), rng)
        assert len(batch.positives) == 10
        assert len(batch.negatives) == 10

    def test_empty_pool_gives_empty_batch(self):
        rng = np.random.default_rng(0)
        assert sample_minibatch(make_assignment(0, 50), rng).size == 0
        assert sample_minibatch(make_assignment(50, 0), rng).size == 0
        assert sample_minibatch(make_assignment(0, 0, 10), rng).size == 0

    def test_indices_sorted_unique_and_from_right_pools(self):
        rng = np.random.default_rng(9)
        assignment = make_assignment(40, 300, 25)
        batch = sample_minibatch(assignment, rng)
        for idx_list in (batch.positives, batch.negatives):
            assert list(idx_list) == sorted(set(int(i) for i in idx_list))
        assert all(assignment.labels[i] == 1 for i in batch.positives)
        assert all(assignment.labels[i] == 0 for i in batch.negatives)

    def test_ratio_window_respected_over_many_draws(self):
        rng = np.random.default_rng(1234)
        for _ in range(300):
            n_pos = int(rng.integers(0, 400))
            n_neg = int(rng.integers(0, 400))
            batch = sample_minibatch(make_assignment(n_pos, n_neg), rng)
            assert batch.size <= 128
            if batch.size:
                assert 0.8 <= batch.ratio <= 1.2

    def test_parameter_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            sample_minibatch(make_assignment(5, 5), rng, max_size=1)
        with pytest.raises(ValueError):
            sample_minibatch(make_assignment(5, 5), rng, ratio_low=1.5, ratio_high=1.0)


class TestRecall:
    def test_exact_fractions(self):
        gts = [BoundingBox(0, 0, 10, 10), BoundingBox(100, 0, 110, 10)]
        proposals = [BoundingBox(0, 0, 10, 10), BoundingBox(100, 0, 110, 5)]
        out = recall_at_iou(proposals, gts, [0.4, 0.6, 0.95])
        assert out[0.4] == 1.0  # both covered at 0.4 (second has IoU 0.5)
        assert out[0.6] == 0.5
        assert out[0.95] == 0.5

    def test_empty_proposals(self):
        out = recall_at_iou([], [BoundingBox(0, 0, 1, 1)], [0.5, 0.8])
        assert out == {0.5: 0.0, 0.8: 0.0}

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(ValueError):
            recall_at_iou([BoundingBox(0, 0, 1, 1)], [], [0.5])

    def test_non_increasing_in_threshold(self):
        rng = np.random.default_rng(21)
        gts = []
        proposals = []
        for _ in range(25):
            x1, y1 = rng.uniform(0, 200, size=2)
            gts.append(BoundingBox(x1, y1, x1 + 20, y1 + 20))
            corners = np.array([x1, y1, x1 + 20, y1 + 20]) + rng.normal(0, 4, size=4)
            proposals.append(
                BoundingBox(
                    min(corners[0], corners[2]),
                    min(corners[1], corners[3]),
                    max(corners[0], corners[2]),
                    max(corners[1], corners[3]),
                )
            )
        thresholds = [0.1 * k for k in range(1, 10)]
        out = recall_at_iou(proposals, gts, thresholds)
        values = [out[t] for t in thresholds]
        assert all(a >= b for a, b in zip(values, values[1:]))
