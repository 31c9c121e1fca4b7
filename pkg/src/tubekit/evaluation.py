"""Tube-level detection metrics and the anticipation-strategy study harness.

A predicted tube matches a ground-truth tube of the same class when their
spatio-temporal overlap reaches a threshold ``delta``. Overlap is the
product of temporal IoU (shared frames over combined frame span, counting
frames inclusively) and the mean spatial box IoU across the shared frames.
Matching is greedy in score order, one ground truth per prediction; average
precision uses the all-points interpolated area under the precision/recall
curve, and mAP averages over the classes that actually have ground truth.

The study harness runs the full pipeline (proposals → anticipation →
detection → linking → trimming → evaluation) for each anticipation strategy
and gap over several seeds, producing a CSV-ready comparison table.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .anticipation import (
    STRATEGY_LEARNED,
    STRATEGY_NONE,
    STRATEGY_NON_MOTION,
    AnticipationModel,
    TrainingSet,
    anticipate,
    augment_proposals,
    build_training_set,
    train_anticipation_model,
)
from .geometry import iou
from .linking import ActionTube, FrameDetections, LinkingParams, extract_tubes
from .synthdata import ConditionedDetector, ProposalOracle, Scene, SceneSpec, generate_scene
from .trimming import TrimmingParams, avg_class_length, trim_tubes


def tube_iou(a: ActionTube, b: ActionTube) -> float:
    """Spatio-temporal overlap of two tubes.

    ``(shared frames / spanned frames) * mean spatial IoU on shared
    frames``, with frame counts inclusive of both endpoints. Tubes with no
    shared frames overlap 0.
    """
    inter_start = max(a.start_frame, b.start_frame)
    inter_end = min(a.end_frame, b.end_frame)
    shared = inter_end - inter_start + 1
    if shared <= 0:
        return 0.0
    union = a.length + b.length - shared
    spatial = [
        iou(a.box_at(f), b.box_at(f)) for f in range(inter_start, inter_end + 1)
    ]
    return (shared / union) * float(np.mean(spatial))


def match_tubes(
    predictions: Sequence[ActionTube],
    ground_truths: Sequence[ActionTube],
    delta: float,
) -> list[Optional[int]]:
    """Greedily assign predictions to ground-truth tubes.

    Predictions are visited in descending score order (ties keep input
    order); each claims the unmatched same-class ground truth with the
    highest overlap, provided it reaches ``delta`` (ties prefer the lowest
    ground-truth index). Each ground truth matches at most once.

    Returns:
        Per prediction (in input order) the matched ground-truth index, or
        ``None`` for a false positive.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].tube_score)
    matched_gt: set[int] = set()
    result: list[Optional[int]] = [None] * len(predictions)
    for i in order:
        pred = predictions[i]
        best_j: Optional[int] = None
        best_overlap = 0.0
        for j, gt in enumerate(ground_truths):
            if j in matched_gt or gt.class_id != pred.class_id:
                continue
            overlap = tube_iou(pred, gt)
            if overlap >= delta and overlap > best_overlap:
                best_overlap = overlap
                best_j = j
        if best_j is not None:
            matched_gt.add(best_j)
            result[i] = best_j
    return result


def average_precision(
    scored_flags: Sequence[tuple[float, bool]], num_ground_truth: int
) -> float:
    """All-points interpolated average precision.

    ``scored_flags`` holds one ``(score, is_true_positive)`` entry per
    prediction; entries are ranked by score descending (stable for ties).

    Raises:
        ValueError: when there is no ground truth (AP undefined).
    """
    if num_ground_truth <= 0:
        raise ValueError("average precision is undefined without ground truth")
    if not scored_flags:
        return 0.0
    order = sorted(range(len(scored_flags)), key=lambda i: -scored_flags[i][0])
    flags = np.array([scored_flags[i][1] for i in order], dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = tp / num_ground_truth
    precision = tp / (tp + fp)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = 0.0
    ap = 0.0
    for k in range(len(flags)):
        if flags[k]:
            ap += (recall[k] - prev_recall) * envelope[k]
            prev_recall = recall[k]
    return float(ap)


@dataclass(frozen=True)
class EvalReport:
    """mAP per overlap threshold, with the per-class breakdown kept around."""

    map_by_delta: dict[float, float]
    ap_by_delta: dict[float, dict[int, float]]

    def mean_ap(self, delta: float) -> float:
        return self.map_by_delta[delta]


def evaluate(
    predictions_by_video: Mapping[str, Sequence[ActionTube]],
    ground_truth_by_video: Mapping[str, Sequence[ActionTube]],
    deltas: Sequence[float],
) -> EvalReport:
    """Score predicted tubes against ground truth over several thresholds.

    Matching runs per video; the matched/unmatched flags are then pooled
    across videos and ranked globally by tube score to build each class's
    precision/recall curve. Classes that never occur in the ground truth are
    skipped (their predictions simply count for nothing); mAP is the
    unweighted mean over the remaining classes.

    Raises:
        ValueError: if the ground truth is empty, or a prediction video id
            has no ground-truth entry.
    """
    unknown = set(predictions_by_video) - set(ground_truth_by_video)
    if unknown:
        raise ValueError(f"predictions for unknown video(s): {sorted(unknown)}")
    gt_classes = sorted(
        {
            tube.class_id
            for tubes in ground_truth_by_video.values()
            for tube in tubes
        }
    )
    if not gt_classes:
        raise ValueError("no ground-truth tubes to evaluate against")

    map_by_delta: dict[float, float] = {}
    ap_by_delta: dict[float, dict[int, float]] = {}
    for delta in deltas:
        ap_per_class: dict[int, float] = {}
        for class_id in gt_classes:
            flags: list[tuple[float, bool]] = []
            num_gt = 0
            for video_id, gts in ground_truth_by_video.items():
                gt_c = [t for t in gts if t.class_id == class_id]
                num_gt += len(gt_c)
                preds_c = [
                    t
                    for t in predictions_by_video.get(video_id, ())
                    if t.class_id == class_id
                ]
                matches = match_tubes(preds_c, gt_c, delta)
                flags.extend(
                    (pred.tube_score, m is not None)
                    for pred, m in zip(preds_c, matches)
                )
            if num_gt == 0:
                continue
            ap_per_class[class_id] = average_precision(flags, num_gt)
        ap_by_delta[float(delta)] = ap_per_class
        map_by_delta[float(delta)] = float(np.mean(list(ap_per_class.values())))
    return EvalReport(map_by_delta=map_by_delta, ap_by_delta=ap_by_delta)


def mean_ap(
    predictions_by_video: Mapping[str, Sequence[ActionTube]],
    ground_truth_by_video: Mapping[str, Sequence[ActionTube]],
    deltas: Sequence[float],
) -> dict[float, float]:
    """mAP per threshold; see :func:`evaluate` for the protocol."""
    return evaluate(predictions_by_video, ground_truth_by_video, deltas).map_by_delta


# --------------------------------------------------------------------------
# strategy study harness
# --------------------------------------------------------------------------

REQUIRED_STUDY_DELTAS = (0.05, 0.1, 0.2, 0.3)
DEFAULT_STUDY_DELTAS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_GAPS = (2, 8, 16)


@dataclass(frozen=True)
class StudyRow:
    """Seed-averaged mAP per threshold for one (strategy, gap) cell."""

    strategy: str
    gap: Optional[int]
    map_by_delta: dict[float, float]


@dataclass(frozen=True)
class StudyReport:
    """Comparison table across anticipation strategies and gaps."""

    rows: tuple[StudyRow, ...]
    deltas: tuple[float, ...]

    def __post_init__(self) -> None:
        missing = [d for d in REQUIRED_STUDY_DELTAS if d not in self.deltas]
        if missing:
            raise ValueError(f"study must include thresholds {missing}")

    def cell(self, strategy: str, gap: Optional[int]) -> StudyRow:
        for row in self.rows:
            if row.strategy == strategy and row.gap == gap:
                return row
        raise KeyError(f"no study row for ({strategy!r}, gap={gap})")

    def to_csv(self) -> str:
        lines = ["strategy,K,delta,mAP"]
        for row in self.rows:
            k = "" if row.gap is None else str(row.gap)
            for delta in self.deltas:
                lines.append(
                    f"{row.strategy},{k},{delta:g},{row.map_by_delta[delta]:.6f}"
                )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class StudyConfig:
    """Oracle/detector/pipeline knobs shared by every study cell."""

    oracle_jitter: float = 15.0
    proposals_per_actor: int = 3
    clutter_proposals: int = 2
    regress_strength: float = 0.75
    min_coverage: float = 0.40
    beta: float = 0.7
    max_tubes_per_class: int = 10
    min_mean_link_score: float = 0.1
    train_epochs: int = 2000
    learning_rate: float = 0.2


def _mix_seed(*parts: int) -> int:
    out = 0
    for p in parts:
        out = (out * 1_000_003 + int(p) + 7) % (2**31 - 1)
    return out


def run_detection_pass(
    scene: Scene,
    oracle: ProposalOracle,
    detector: ConditionedDetector,
    strategy: str = STRATEGY_NONE,
    model: Optional[AnticipationModel] = None,
    gap: Optional[int] = None,
) -> list[FrameDetections]:
    """Run proposals → (anticipation) → detection over every frame.

    With a non-trivial strategy and ``t >= gap``, the pass feeds its own
    detections from ``t - gap`` through :func:`anticipate` and appends the
    predicted boxes to frame ``t``'s proposals before detecting.
    """
    spec = scene.spec
    if strategy != STRATEGY_NONE:
        if gap is None or gap < 1:
            raise ValueError("anticipating strategies need a positive gap")
        if strategy == STRATEGY_LEARNED and model is None:
            raise ValueError("the learned strategy needs a trained model")
    frames: list[FrameDetections] = []
    for t in range(spec.num_frames):
        proposals = oracle.propose(t)
        if strategy != STRATEGY_NONE and t >= gap:
            sources = frames[t - gap].detections
            anticipator = model if strategy == STRATEGY_LEARNED else strategy
            predicted = anticipate(
                anticipator,
                [(d.box, d.motion or (0.0, 0.0)) for d in sources],
                image_width=spec.width,
                image_height=spec.height,
            )
            proposals = augment_proposals(proposals, predicted)
        dets = detector.detect(t, proposals)
        frames.append(FrameDetections(frame_index=t, detections=tuple(dets)))
    return frames


def _concat_training_sets(sets: Sequence[TrainingSet]) -> TrainingSet:
    nonempty = [s for s in sets if s.features.shape[0]]
    if not nonempty:
        return TrainingSet(
            features=np.zeros((0, 6)), targets=np.zeros((0, 4)),
            positive=np.zeros(0, dtype=bool),
        )
    return TrainingSet(
        features=np.concatenate([s.features for s in nonempty]),
        targets=np.concatenate([s.targets for s in nonempty]),
        positive=np.concatenate([s.positive for s in nonempty]),
    )


def _training_set_for_gap(
    train_data: Sequence[tuple[Scene, Sequence[FrameDetections]]], gap: int
) -> TrainingSet:
    per_scene = []
    for scene, frames in train_data:
        spec = scene.spec
        pairs = []
        for t in range(spec.num_frames - gap):
            dets = frames[t].detections
            if not dets:
                continue
            future = [box for _, _, box, _ in scene.frame_truth(t + gap)]
            pairs.append(
                ([(d.box, d.motion or (0.0, 0.0)) for d in dets], future)
            )
        per_scene.append(
            build_training_set(
                pairs, image_width=spec.width, image_height=spec.height
            )
        )
    return _concat_training_sets(per_scene)


def _pipeline_map(
    eval_items: Sequence[tuple[Scene, ProposalOracle, ConditionedDetector]],
    strategy: str,
    gap: Optional[int],
    model: Optional[AnticipationModel],
    trim_params: TrimmingParams,
    deltas: Sequence[float],
    config: StudyConfig,
) -> dict[float, float]:
    link_params = LinkingParams(beta=config.beta)
    preds: dict[str, list[ActionTube]] = {}
    gts: dict[str, list[ActionTube]] = {}
    for scene, oracle, detector in eval_items:
        frames = run_detection_pass(scene, oracle, detector, strategy, model, gap)
        tubes = extract_tubes(
            frames,
            link_params,
            max_tubes_per_class=config.max_tubes_per_class,
            min_mean_link_score=config.min_mean_link_score,
        )
        video_id = scene.spec.video_id
        preds[video_id] = trim_tubes(tubes, trim_params, link_params)
        gts[video_id] = list(scene.tubes)
    return mean_ap(preds, gts, deltas)


def run_strategy_study(
    scene_specs: Sequence[SceneSpec],
    *,
    strategies: Sequence[str] = (STRATEGY_NONE, STRATEGY_NON_MOTION, STRATEGY_LEARNED),
    gaps: Sequence[int] = DEFAULT_GAPS,
    deltas: Sequence[float] = DEFAULT_STUDY_DELTAS,
    seeds: Sequence[int] = (0, 1, 2),
    config: StudyConfig = StudyConfig(),
) -> StudyReport:
    """Compare anticipation strategies over reseeded scene replicas.

    For every seed, each base spec is re-instantiated twice with derived
    seeds: a training replica (supplying anticipation training data and the
    per-class average tube lengths for trimming) and an evaluation replica.
    All strategies share the same oracle and detector noise streams within a
    seed, so cells differ only in the proposals anticipation adds. Reported
    numbers are per-cell means over seeds.
    """
    if not scene_specs:
        raise ValueError("study needs at least one scene spec")
    if not seeds:
        raise ValueError("study needs at least one seed")
    for s in strategies:
        if s not in (STRATEGY_NONE, STRATEGY_NON_MOTION, STRATEGY_LEARNED):
            raise ValueError(f"unknown strategy {s!r}")
    if any(g < 1 for g in gaps):
        raise ValueError("gaps must be positive")

    cells: list[tuple[str, Optional[int]]] = []
    for strategy in strategies:
        if strategy == STRATEGY_NONE:
            cells.append((strategy, None))
        else:
            cells.extend((strategy, gap) for gap in gaps)
    sums: dict[tuple[str, Optional[int]], dict[float, float]] = {
        cell: {float(d): 0.0 for d in deltas} for cell in cells
    }

    for seed in seeds:
        train_data: list[tuple[Scene, list[FrameDetections]]] = []
        train_gt: list[ActionTube] = []
        eval_items: list[tuple[Scene, ProposalOracle, ConditionedDetector]] = []
        for spec in scene_specs:
            train_spec = replace(
                spec,
                seed=_mix_seed(spec.seed, seed, 1),
                video_id=f"{spec.video_id}@train{seed}",
            )
            eval_spec = replace(
                spec,
                seed=_mix_seed(spec.seed, seed, 2),
                video_id=f"{spec.video_id}@eval{seed}",
            )
            for which, sc_spec in (("train", train_spec), ("eval", eval_spec)):
                scene = generate_scene(sc_spec)
                oracle = ProposalOracle(
                    scene,
                    jitter_sigma=config.oracle_jitter,
                    per_actor=config.proposals_per_actor,
                    clutter=config.clutter_proposals,
                    seed=_mix_seed(sc_spec.seed, 3),
                )
                detector = ConditionedDetector(
                    scene,
                    regress_strength=config.regress_strength,
                    min_coverage=config.min_coverage,
                    seed=_mix_seed(sc_spec.seed, 4),
                )
                if which == "train":
                    frames = run_detection_pass(scene, oracle, detector)
                    train_data.append((scene, frames))
                    train_gt.extend(scene.tubes)
                else:
                    eval_items.append((scene, oracle, detector))

        lengths = avg_class_length(train_gt)
        trim_params = TrimmingParams(avg_length=lengths)
        models: dict[int, AnticipationModel] = {}
        if STRATEGY_LEARNED in strategies:
            for gap in gaps:
                models[gap] = train_anticipation_model(
                    _training_set_for_gap(train_data, gap),
                    gap,
                    epochs=config.train_epochs,
                    learning_rate=config.learning_rate,
                )
        for strategy, gap in cells:
            result = _pipeline_map(
                eval_items,
                strategy,
                gap,
                models.get(gap) if strategy == STRATEGY_LEARNED else None,
                trim_params,
                deltas,
                config,
            )
            for d, v in result.items():
                sums[(strategy, gap)][d] += v

    rows = tuple(
        StudyRow(
            strategy=strategy,
            gap=gap,
            map_by_delta={d: total / len(seeds) for d, total in sums[(strategy, gap)].items()},
        )
        for strategy, gap in cells
    )
    return StudyReport(rows=rows, deltas=tuple(float(d) for d in deltas))
