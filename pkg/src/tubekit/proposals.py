"""Two-stage cascade box-proposal refinement and training-sample selection.

A proposal stage is a pair of callables (a regressor producing box offsets
and a scorer producing objectness in ``[0, 1]``) applied to a set of
candidate boxes. The cascade runs one stage over a dense anchor grid,
suppresses duplicates, keeps the best few hundred, and refines those again
with a second stage; the second-stage scores are the ones reported.

Also provided: IoU-based positive/negative assignment of candidates to
ground-truth boxes and the ratio-balanced mini-batch draw used when fitting
box regressors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    BoundingBox,
    BoxDelta,
    clip,
    decode_delta,
    iou_matrix,
    nms,
)

Scorer = Callable[[BoundingBox], float]
Regressor = Callable[[BoundingBox], BoxDelta]


@dataclass(frozen=True)
class AnchorConfig:
    """Dense anchor grid layout.

    One anchor per (cell, scale, ratio) combination. Anchor centers sit at
    ``(i + 0.5) * stride`` in each axis; for scale ``s`` and aspect ratio
    ``r`` the anchor is ``h = s * sqrt(r)`` tall and ``w = s / sqrt(r)``
    wide. Anchors are generated unclipped, so border anchors may extend
    outside the image.
    """

    stride: int = 16
    scales: tuple[float, ...] = (128.0, 256.0, 512.0)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self) -> None:
        if self.stride <= 0:
            raise ValueError("stride must be positive")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive and non-empty")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be positive and non-empty")


def generate_anchors(width: int, height: int, config: AnchorConfig) -> list[BoundingBox]:
    """Enumerate the anchor grid for an ``width x height`` image.

    Cells iterate row-major (y outer, x inner); within a cell, scales outer
    and ratios inner. Grid size per axis is ``ceil(extent / stride)``.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    nx = -(-width // config.stride)
    ny = -(-height // config.stride)
    anchors: list[BoundingBox] = []
    for iy in range(ny):
        cy = (iy + 0.5) * config.stride
        for ix in range(nx):
            cx = (ix + 0.5) * config.stride
            for scale in config.scales:
                for ratio in config.ratios:
                    h = scale * np.sqrt(ratio)
                    w = scale / np.sqrt(ratio)
                    anchors.append(
                        BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
                    )
    return anchors


@dataclass(frozen=True)
class ProposalStage:
    """One refinement stage: regress each candidate, then score the result."""

    regressor: Regressor
    scorer: Scorer


def refine_stage(
    candidates: Sequence[BoundingBox],
    stage: ProposalStage,
    *,
    image_width: float,
    image_height: float,
) -> list[tuple[BoundingBox, float]]:
    """Regress, clip, and score candidates; drops boxes that collapse to zero area.

    The scorer sees the refined (clipped) box, not the input candidate.
    """
    out: list[tuple[BoundingBox, float]] = []
    for box in candidates:
        refined = clip(decode_delta(box, stage.regressor(box)), image_width, image_height)
        if refined.area <= 0.0:
            continue
        score = float(stage.scorer(refined))
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"scorer returned {score}, expected a value in [0, 1]")
        out.append((refined, score))
    return out


def single_stage_refine(
    anchors: Sequence[BoundingBox],
    stage: ProposalStage,
    *,
    image_width: float,
    image_height: float,
    nms_threshold: float = 0.7,
    top_n: int = 300,
) -> list[tuple[BoundingBox, float]]:
    """One-pass baseline: refine, NMS, keep the ``top_n`` best.

    Returns (box, score) pairs sorted by score descending.
    """
    scored = refine_stage(
        anchors, stage, image_width=image_width, image_height=image_height
    )
    kept = nms(scored, nms_threshold)[:top_n]
    return [scored[i] for i in kept]


def cascade_refine(
    anchors: Sequence[BoundingBox],
    stage_a: ProposalStage,
    stage_b: ProposalStage,
    *,
    image_width: float,
    image_height: float,
    nms_threshold: float = 0.7,
    top_n: int = 300,
) -> list[tuple[BoundingBox, float]]:
    """Two-stage cascade: stage-a refine -> NMS -> top_n -> stage-b refine.

    Only the second stage's scores survive to the output, which is sorted by
    score descending.
    """
    first = single_stage_refine(
        anchors,
        stage_a,
        image_width=image_width,
        image_height=image_height,
        nms_threshold=nms_threshold,
        top_n=top_n,
    )
    second = refine_stage(
        [b for b, _ in first],
        stage_b,
        image_width=image_width,
        image_height=image_height,
    )
    second.sort(key=lambda pair: -pair[1])
    return second


@dataclass(frozen=True)
class SampleAssignment:
    """Per-candidate training labels against a ground-truth set.

    ``labels[i]`` is 1 (positive), 0 (negative), or -1 (ignored).
    ``matched_gt[i]`` is the index of the highest-IoU ground-truth box for
    candidate ``i`` (meaningful whenever there is at least one ground truth),
    and ``max_iou[i]`` is that IoU.
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    max_iou: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.labels) == len(self.matched_gt) == len(self.max_iou)):
            raise ValueError("assignment arrays must share one length")


def assign_samples(
    candidates: Sequence[BoundingBox],
    ground_truths: Sequence[BoundingBox],
    *,
    positive_threshold: float = 0.7,
    negative_threshold: float = 0.3,
) -> SampleAssignment:
    """Label candidates by IoU against ground truth.

    IoU above ``positive_threshold`` is positive, below
    ``negative_threshold`` negative, anything between is ignored (-1).
    Additionally, for every ground-truth box the candidate with the highest
    IoU is forced positive (ties keep all tied candidates) so that no ground
    truth goes unmatched even when all overlaps are low. With an empty
    ground-truth set, every candidate is negative.
    """
    if negative_threshold > positive_threshold:
        raise ValueError("negative threshold must not exceed positive threshold")
    n = len(candidates)
    if not ground_truths:
        return SampleAssignment(
            labels=np.zeros(n, dtype=np.int8),
            matched_gt=np.full(n, -1, dtype=np.int64),
            max_iou=np.zeros(n, dtype=np.float64),
        )
    ious = iou_matrix(candidates, ground_truths)
    max_iou = ious.max(axis=1)
    matched_gt = ious.argmax(axis=1).astype(np.int64)
    labels = np.full(n, -1, dtype=np.int8)
    labels[max_iou < negative_threshold] = 0
    labels[max_iou > positive_threshold] = 1
    if n:
        # force each ground truth's best candidate(s) positive
        gt_best = ious.max(axis=0)
        for j in range(len(ground_truths)):
            if gt_best[j] <= 0.0:
                continue
            best_rows = np.nonzero(ious[:, j] == gt_best[j])[0]
            labels[best_rows] = 1
            matched_gt[best_rows] = j
    return SampleAssignment(labels=labels, matched_gt=matched_gt, max_iou=max_iou)


@dataclass(frozen=True)
class MiniBatch:
    """Indices drawn for one training step."""

    positives: np.ndarray
    negatives: np.ndarray

    @property
    def size(self) -> int:
        return len(self.positives) + len(self.negatives)

    @property
    def ratio(self) -> float:
        if len(self.negatives) == 0:
            return float("inf")
        return len(self.positives) / len(self.negatives)


def sample_minibatch(
    assignment: SampleAssignment,
    rng: np.random.Generator,
    *,
    max_size: int = 128,
    ratio_low: float = 0.8,
    ratio_high: float = 1.2,
) -> MiniBatch:
    """Draw a ratio-balanced mini-batch from an assignment.

    The draw keeps at most ``max_size`` samples total with a
    positive:negative count ratio inside ``[ratio_low, ratio_high]``
    whenever both pools are non-empty, shrinking whichever side is
    over-represented. If either pool is empty no valid ratio exists and the
    batch is empty. Selection within each pool is uniform without
    replacement.
    """
    if max_size < 2:
        raise ValueError("max_size must be at least 2")
    if not 0 < ratio_low <= ratio_high:
        raise ValueError("need 0 < ratio_low <= ratio_high")
    pos_pool = np.nonzero(assignment.labels == 1)[0]
    neg_pool = np.nonzero(assignment.labels == 0)[0]
    empty = MiniBatch(
        positives=np.zeros(0, dtype=np.int64), negatives=np.zeros(0, dtype=np.int64)
    )
    if len(pos_pool) == 0 or len(neg_pool) == 0:
        return empty
    target_ratio = min(max(1.0, ratio_low), ratio_high)
    n_pos = min(len(pos_pool), max_size // 2)
    n_neg = min(len(neg_pool), max_size - n_pos, max(1, round(n_pos / target_ratio)))
    # the negative pool may be small; cap positives so the ratio stays legal
    n_pos = min(n_pos, int(np.floor(ratio_high * n_neg)))
    if n_pos == 0 or n_neg == 0:
        return empty
    ratio = n_pos / n_neg
    if not ratio_low <= ratio <= ratio_high:
        return empty
    pos = rng.choice(pos_pool, size=n_pos, replace=False)
    neg = rng.choice(neg_pool, size=n_neg, replace=False)
    return MiniBatch(positives=np.sort(pos), negatives=np.sort(neg))


def recall_at_iou(
    proposals: Sequence[BoundingBox],
    ground_truths: Sequence[BoundingBox],
    thresholds: Sequence[float],
) -> dict[float, float]:
    """Fraction of ground-truth boxes covered by some proposal at each IoU threshold.

    A ground truth counts as recalled at threshold ``t`` when its best
    proposal IoU is ``>= t``.

    Raises:
        ValueError: with an empty ground-truth set (recall is undefined).
    """
    if not ground_truths:
        raise ValueError("recall is undefined without ground-truth boxes")
    if not proposals:
        return {float(t): 0.0 for t in thresholds}
    best = iou_matrix(proposals, ground_truths).max(axis=0)
    return {float(t): float(np.mean(best >= t)) for t in thresholds}
