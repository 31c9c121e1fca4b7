"""Synthetic scenes and detection oracles.

Stands in for a real video detector: actors are rectangles moving with
(optionally noisy) constant velocity across an image, producing ground-truth
tubes plus per-frame motion descriptors. Two detection channels are
provided:

* :func:`render_detections` — unconditional noise channel: each visible
  ground-truth box is dropped with a miss rate or jittered, scored from a
  Gaussian, and mixed with Poisson false positives.
* :class:`ConditionedDetector` — proposal-conditioned channel: a ground
  truth is only detectable when some proposal covers it, and both the miss
  odds and the score degrade as coverage drops. This is what couples
  proposal quality (and hence anticipation) to downstream tube metrics.

All randomness flows through ``numpy`` generators seeded from the scene
seed plus the frame index, so each frame's output is independent of
evaluation order.

Nominal frame rate is 25 fps, making a gap of 8 frames roughly a third of
a second of lookahead; nothing computes with this — it is calibration
commentary only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import BoundingBox, clip, encode_delta, iou_matrix
from .linking import ActionTube, Detection, FrameDetections
from .proposals import ProposalStage, cascade_refine, recall_at_iou, single_stage_refine

Motion = tuple[float, float]

# stream tags keeping the per-frame rng of each consumer distinct
_STREAM_TRAJECTORY = 3
_STREAM_RENDER = 11
_STREAM_PROPOSALS = 101
_STREAM_DETECTOR = 202

_MIN_FP_SIZE = 8.0


@dataclass(frozen=True)
class ActorSpec:
    """One moving rectangle: class, lifetime, initial box, velocity."""

    class_id: int
    entry_frame: int
    exit_frame: int
    box: BoundingBox
    velocity: tuple[float, float] = (0.0, 0.0)
    velocity_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")
        if self.entry_frame < 0 or self.exit_frame < self.entry_frame:
            raise ValueError("need 0 <= entry_frame <= exit_frame")
        if self.velocity_sigma < 0:
            raise ValueError("velocity_sigma must be non-negative")
        if self.box.area <= 0:
            raise ValueError("actor box must have positive area")


@dataclass(frozen=True)
class NoiseModel:
    """Detector noise knobs.

    ``sigma_loc`` jitters every box corner coordinate; true positives are
    dropped with ``miss_rate`` and scored from ``N(tp_score_mean,
    tp_score_sigma)`` clipped to [0, 1]; ``fp_rate`` is the Poisson mean of
    false positives per frame, scored from the FP distribution.
    """

    sigma_loc: float = 2.0
    miss_rate: float = 0.05
    fp_rate: float = 0.5
    tp_score_mean: float = 0.85
    tp_score_sigma: float = 0.05
    fp_score_mean: float = 0.3
    fp_score_sigma: float = 0.1

    def __post_init__(self) -> None:
        for name in ("sigma_loc", "tp_score_sigma", "fp_score_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("miss_rate",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be non-negative")
        for name in ("tp_score_mean", "fp_score_mean"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(
            sigma_loc=0.0,
            miss_rate=0.0,
            fp_rate=0.0,
            tp_score_mean=1.0,
            tp_score_sigma=0.0,
            fp_score_mean=0.0,
            fp_score_sigma=0.0,
        )


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one synthetic video."""

    video_id: str
    width: int
    height: int
    num_frames: int
    actors: tuple[ActorSpec, ...]
    noise: NoiseModel = NoiseModel()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.num_frames < 1:
            raise ValueError("need at least one frame")
        if not self.actors:
            raise ValueError("scene needs at least one actor")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        for actor in self.actors:
            if actor.exit_frame >= self.num_frames:
                raise ValueError(
                    f"actor exits at frame {actor.exit_frame}, scene has "
                    f"{self.num_frames} frames"
                )


@dataclass(frozen=True)
class Scene:
    """Generated ground truth: one tube and motion track per visible actor."""

    spec: SceneSpec
    tubes: tuple[ActionTube, ...]
    motions: tuple[tuple[Motion, ...], ...]  # aligned with tubes, per frame

    def __post_init__(self) -> None:
        if len(self.tubes) != len(self.motions):
            raise ValueError("tubes and motion tracks must align")

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted({t.class_id for t in self.tubes}))

    def frame_truth(
        self, frame_index: int
    ) -> list[tuple[int, int, BoundingBox, Motion]]:
        """(tube index, class_id, box, motion) for every tube covering the frame."""
        out = []
        for i, tube in enumerate(self.tubes):
            if tube.start_frame <= frame_index <= tube.end_frame:
                offset = frame_index - tube.start_frame
                out.append(
                    (i, tube.class_id, tube.boxes[offset], self.motions[i][offset])
                )
        return out


def _actor_trajectory(
    spec: SceneSpec, actor_index: int
) -> list[tuple[int, BoundingBox]]:
    """Clipped per-frame boxes for the actor's first contiguous visible span."""
    actor = spec.actors[actor_index]
    rng = np.random.default_rng([spec.seed, actor_index, _STREAM_TRAJECTORY])
    cx, cy = actor.box.center
    w, h = actor.box.width, actor.box.height
    visible: list[tuple[int, BoundingBox]] = []
    for frame in range(actor.entry_frame, actor.exit_frame + 1):
        if frame > actor.entry_frame:
            vx, vy = actor.velocity
            if actor.velocity_sigma > 0:
                vx += rng.normal(0.0, actor.velocity_sigma)
                vy += rng.normal(0.0, actor.velocity_sigma)
            cx += vx
            cy += vy
        raw = BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        clipped = clip(raw, spec.width, spec.height)
        on_screen = clipped.area > 0
        if on_screen:
            visible.append((frame, clipped))
        elif visible:
            break  # keep only the first contiguous visible span
    return visible


def generate_scene(spec: SceneSpec) -> Scene:
    """Ground-truth tubes plus motion descriptors for a scene.

    Each actor yields one tube covering its first contiguous span of frames
    with positive on-screen area; boxes are clipped to the image and scored
    1.0. The motion descriptor at a frame is the actual clipped-box center
    displacement from the previous frame (the first frame borrows the
    following displacement so every frame carries the actor's motion;
    single-frame tubes get (0, 0)).

    Raises:
        ValueError: when an actor is never visible inside the image.
    """
    tubes: list[ActionTube] = []
    motions: list[tuple[Motion, ...]] = []
    for idx, actor in enumerate(spec.actors):
        track = _actor_trajectory(spec, idx)
        if not track:
            raise ValueError(
                f"actor {idx} (class {actor.class_id}) never appears inside the image"
            )
        frames = [f for f, _ in track]
        boxes = [b for _, b in track]
        centers = [b.center for b in boxes]
        per_frame: list[Motion] = []
        for k in range(len(boxes)):
            if k > 0:
                dx = centers[k][0] - centers[k - 1][0]
                dy = centers[k][1] - centers[k - 1][1]
            elif len(boxes) > 1:
                dx = centers[1][0] - centers[0][0]
                dy = centers[1][1] - centers[0][1]
            else:
                dx = dy = 0.0
            per_frame.append((dx, dy))
        tubes.append(
            ActionTube(
                class_id=actor.class_id,
                start_frame=frames[0],
                boxes=tuple(boxes),
                scores=tuple(1.0 for _ in boxes),
            )
        )
        motions.append(tuple(per_frame))
    return Scene(spec=spec, tubes=tuple(tubes), motions=tuple(motions))


def _jitter_box(
    box: BoundingBox, sigma: float, rng: np.random.Generator, width: float, height: float
) -> Optional[BoundingBox]:
    """Corner-jittered, order-repaired, clipped copy; None if it collapses."""
    if sigma <= 0:
        jittered = box
    else:
        e = rng.normal(0.0, sigma, size=4)
        x1, x2 = sorted((box.x1 + e[0], box.x2 + e[2]))
        y1, y2 = sorted((box.y1 + e[1], box.y2 + e[3]))
        jittered = BoundingBox(x1, y1, x2, y2)
    clipped = clip(jittered, width, height)
    return clipped if clipped.area > 0 else None


def _clip01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _false_positives(
    scene: Scene, noise: NoiseModel, rng: np.random.Generator
) -> list[Detection]:
    spec = scene.spec
    classes = scene.classes
    count = int(rng.poisson(noise.fp_rate))
    out: list[Detection] = []
    for _ in range(count):
        class_id = int(classes[rng.integers(0, len(classes))])
        cx = rng.uniform(0, spec.width)
        cy = rng.uniform(0, spec.height)
        max_size = max(_MIN_FP_SIZE + 1.0, min(spec.width, spec.height) / 2.0)
        w = math.exp(rng.uniform(math.log(_MIN_FP_SIZE), math.log(max_size)))
        h = math.exp(rng.uniform(math.log(_MIN_FP_SIZE), math.log(max_size)))
        box = clip(
            BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
            spec.width,
            spec.height,
        )
        if box.area <= 0:
            continue
        score = _clip01(rng.normal(noise.fp_score_mean, noise.fp_score_sigma))
        out.append(Detection(box=box, class_id=class_id, score=score, motion=(0.0, 0.0)))
    return out


def render_detections(
    scene: Scene, noise: Optional[NoiseModel] = None, seed: Optional[int] = None
) -> list[FrameDetections]:
    """Unconditional noisy detections for every frame of a scene.

    Per visible ground-truth box: dropped with the miss rate, otherwise
    corner-jittered, clipped, and scored; false positives arrive at a
    Poisson rate per frame with their own score model. With all noise at
    zero the output equals the ground truth with score 1.0. Deterministic
    given the seed (default: the scene's own).
    """
    noise = scene.spec.noise if noise is None else noise
    seed = scene.spec.seed if seed is None else seed
    spec = scene.spec
    frames: list[FrameDetections] = []
    for frame in range(spec.num_frames):
        rng = np.random.default_rng([seed, frame, _STREAM_RENDER])
        dets: list[Detection] = []
        for _, class_id, box, motion in scene.frame_truth(frame):
            if noise.miss_rate > 0 and rng.uniform() < noise.miss_rate:
                continue
            jittered = _jitter_box(box, noise.sigma_loc, rng, spec.width, spec.height)
            if jittered is None:
                continue
            score = _clip01(rng.normal(noise.tp_score_mean, noise.tp_score_sigma))
            dets.append(
                Detection(box=jittered, class_id=class_id, score=score, motion=motion)
            )
        dets.extend(_false_positives(scene, noise, rng))
        frames.append(FrameDetections(frame_index=frame, detections=tuple(dets)))
    return frames


class ProposalOracle:
    """Box proposals from jittered ground truth plus uniform clutter.

    Emulates a proposal stage's output quality without running one: each
    visible ground-truth box spawns ``per_actor`` corner-jittered copies
    (``jitter_sigma`` px), and ``clutter`` background boxes are thrown in
    uniformly. Per-frame outputs are deterministic in (seed, frame).
    """

    def __init__(
        self,
        scene: Scene,
        *,
        jitter_sigma: float = 8.0,
        per_actor: int = 6,
        clutter: int = 4,
        seed: int = 0,
    ) -> None:
        if jitter_sigma < 0 or per_actor < 0 or clutter < 0:
            raise ValueError("oracle parameters must be non-negative")
        self.scene = scene
        self.jitter_sigma = jitter_sigma
        self.per_actor = per_actor
        self.clutter = clutter
        self.seed = seed

    def propose(self, frame_index: int) -> list[BoundingBox]:
        spec = self.scene.spec
        rng = np.random.default_rng([self.seed, frame_index, _STREAM_PROPOSALS])
        out: list[BoundingBox] = []
        for _, _, box, _ in self.scene.frame_truth(frame_index):
            for _ in range(self.per_actor):
                jittered = _jitter_box(
                    box, self.jitter_sigma, rng, spec.width, spec.height
                )
                if jittered is not None:
                    out.append(jittered)
        for _ in range(self.clutter):
            cx = rng.uniform(0, spec.width)
            cy = rng.uniform(0, spec.height)
            max_size = max(_MIN_FP_SIZE + 1.0, min(spec.width, spec.height) / 2.0)
            w = math.exp(rng.uniform(math.log(_MIN_FP_SIZE), math.log(max_size)))
            h = math.exp(rng.uniform(math.log(_MIN_FP_SIZE), math.log(max_size)))
            box = clip(
                BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                spec.width,
                spec.height,
            )
            if box.area > 0:
                out.append(box)
        return out


class ConditionedDetector:
    """Detections whose quality depends on how well proposals cover the truth.

    For each visible ground-truth box the detector looks up the
    best-overlapping proposal (its *coverage*). Coverage below
    ``min_coverage`` is an automatic miss; otherwise the reported box is the
    best proposal pulled ``regress_strength`` of the way toward the truth
    (imitating a regression head that can only refine what the proposals
    give it), jittered by the noise model, and the score is drawn with its
    mean scaled by coverage. False positives follow the noise model
    unchanged. Better proposals therefore mean fewer misses, tighter boxes,
    and higher scores — the lever the anticipation strategies compete on.
    """

    def __init__(
        self,
        scene: Scene,
        noise: Optional[NoiseModel] = None,
        *,
        regress_strength: float = 0.75,
        min_coverage: float = 0.45,
        seed: int = 0,
    ) -> None:
        if not 0.0 <= regress_strength <= 1.0:
            raise ValueError("regress_strength must be in [0, 1]")
        if not 0.0 <= min_coverage <= 1.0:
            raise ValueError("min_coverage must be in [0, 1]")
        self.scene = scene
        self.noise = scene.spec.noise if noise is None else noise
        self.regress_strength = regress_strength
        self.min_coverage = min_coverage
        self.seed = seed

    def detect(
        self, frame_index: int, proposals: Sequence[BoundingBox]
    ) -> list[Detection]:
        spec = self.scene.spec
        noise = self.noise
        rng = np.random.default_rng([self.seed, frame_index, _STREAM_DETECTOR])
        truth = self.scene.frame_truth(frame_index)
        dets: list[Detection] = []
        overlaps = (
            iou_matrix([box for _, _, box, _ in truth], list(proposals))
            if truth and proposals
            else np.zeros((len(truth), 0))
        )
        for row, (_, class_id, gt_box, motion) in enumerate(truth):
            coverage = float(overlaps[row].max()) if overlaps.shape[1] else 0.0
            # the rng draws below happen unconditionally so that one actor's
            # coverage cannot shift another actor's noise stream
            miss_draw = rng.uniform()
            corner_noise = rng.normal(0.0, 1.0, size=4)
            score_noise = rng.normal(0.0, 1.0)
            if coverage < self.min_coverage:
                continue
            if noise.miss_rate > 0 and miss_draw < noise.miss_rate:
                continue
            best = int(overlaps[row].argmax())
            prop = proposals[best]
            rho = self.regress_strength
            blended = BoundingBox(
                prop.x1 + rho * (gt_box.x1 - prop.x1),
                prop.y1 + rho * (gt_box.y1 - prop.y1),
                prop.x2 + rho * (gt_box.x2 - prop.x2),
                prop.y2 + rho * (gt_box.y2 - prop.y2),
            )
            e = corner_noise * noise.sigma_loc
            x1, x2 = sorted((blended.x1 + e[0], blended.x2 + e[2]))
            y1, y2 = sorted((blended.y1 + e[1], blended.y2 + e[3]))
            box = clip(BoundingBox(x1, y1, x2, y2), spec.width, spec.height)
            if box.area <= 0:
                continue
            score = _clip01(
                noise.tp_score_mean * coverage + score_noise * noise.tp_score_sigma
            )
            dets.append(Detection(box=box, class_id=class_id, score=score, motion=motion))
        dets.extend(_false_positives(self.scene, noise, rng))
        return dets


def drifting_scene_specs(
    num_scenes: int = 4,
    *,
    width: int = 320,
    height: int = 240,
    num_frames: int = 90,
    base_seed: int = 7,
    noise: Optional[NoiseModel] = None,
) -> list[SceneSpec]:
    """The standard drifting-scene benchmark fixture.

    Each scene holds two actors of different classes crossing the image in
    opposite directions at a steady drift (speed varies a little per scene),
    with moderate detector noise. Motion is fast enough that a multi-frame
    anticipation gap displaces boxes by a large fraction of their size —
    the regime where anticipation strategies separate.
    """
    if num_scenes < 1:
        raise ValueError("need at least one scene")
    if noise is None:
        noise = NoiseModel(
            sigma_loc=2.0,
            miss_rate=0.03,
            fp_rate=0.25,
            tp_score_mean=0.9,
            tp_score_sigma=0.04,
            fp_score_mean=0.35,
            fp_score_sigma=0.08,
        )
    specs = []
    size = 52.0
    for i in range(num_scenes):
        speed = 1.4 * (1.0 + 0.08 * (i % 3))
        vy = 0.85 if i % 2 == 0 else -0.85
        left = ActorSpec(
            class_id=0,
            entry_frame=0,
            exit_frame=num_frames - 1,
            box=BoundingBox(40 - size / 2, 60 - size / 2, 40 + size / 2, 60 + size / 2)
            if vy > 0
            else BoundingBox(
                40 - size / 2, 180 - size / 2, 40 + size / 2, 180 + size / 2
            ),
            velocity=(speed, vy),
            velocity_sigma=0.2,
        )
        right = ActorSpec(
            class_id=1,
            entry_frame=0,
            exit_frame=num_frames - 1,
            box=BoundingBox(
                280 - size / 2, 180 - size / 2, 280 + size / 2, 180 + size / 2
            )
            if vy > 0
            else BoundingBox(
                280 - size / 2, 60 - size / 2, 280 + size / 2, 60 + size / 2
            ),
            velocity=(-speed, -vy),
            velocity_sigma=0.2,
        )
        specs.append(
            SceneSpec(
                video_id=f"drift-{i:02d}",
                width=width,
                height=height,
                num_frames=num_frames,
                actors=(left, right),
                noise=noise,
                seed=base_seed + i,
            )
        )
    return specs


def halving_stage(ground_truths: Sequence[BoundingBox]) -> ProposalStage:
    """Oracle refinement stage that halves a candidate's error.

    The regressor targets the box halfway (per corner) between the
    candidate and its nearest ground truth (by center distance); the scorer
    reports the refined box's best IoU against the ground truths. Two such
    stages quarter the initial error — the reference behavior for cascade
    experiments.
    """
    if not ground_truths:
        raise ValueError("oracle stage needs at least one ground-truth box")
    centers = np.array([b.center for b in ground_truths])

    def nearest(box: BoundingBox) -> BoundingBox:
        cx, cy = box.center
        d2 = (centers[:, 0] - cx) ** 2 + (centers[:, 1] - cy) ** 2
        return ground_truths[int(d2.argmin())]

    def regressor(box: BoundingBox):
        gt = nearest(box)
        halfway = BoundingBox(
            (box.x1 + gt.x1) / 2,
            (box.y1 + gt.y1) / 2,
            (box.x2 + gt.x2) / 2,
            (box.y2 + gt.y2) / 2,
        )
        return encode_delta(box, halfway)

    def scorer(box: BoundingBox) -> float:
        return float(iou_matrix([box], list(ground_truths)).max())

    return ProposalStage(regressor=regressor, scorer=scorer)


DEMO_RECALL_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def cascade_recall_demo(
    num_boxes: int = 1000,
    *,
    jitter_sigma: float = 18.0,
    seed: int = 0,
    thresholds: Sequence[float] = DEMO_RECALL_THRESHOLDS,
) -> dict[str, dict[float, float]]:
    """Recall curves for one vs two error-halving refinement stages.

    ``num_boxes`` ground-truth boxes are scattered on a wide grid (far
    enough apart that suppression never couples them), each paired with one
    anchor whose corners are jittered by ``N(0, jitter_sigma)``. The same
    halving stage is applied once (single pass) and twice (cascade); each
    extra stage halves the remaining corner error, which shows up as a
    recall gain concentrated at the high-IoU end of the curve.

    Returns:
        ``{"one_stage": {threshold: recall}, "two_stage": {...}}``.
    """
    if num_boxes < 1:
        raise ValueError("need at least one box")
    rng = np.random.default_rng(seed)
    cell = 400.0
    cols = int(math.ceil(math.sqrt(num_boxes)))
    rows = int(math.ceil(num_boxes / cols))
    width = cols * cell
    height = rows * cell
    gts: list[BoundingBox] = []
    anchors: list[BoundingBox] = []
    for i in range(num_boxes):
        cx = (i % cols + 0.5) * cell
        cy = (i // cols + 0.5) * cell
        w = rng.uniform(40.0, 120.0)
        h = rng.uniform(40.0, 120.0)
        gt = BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        gts.append(gt)
        e = rng.normal(0.0, jitter_sigma, size=4)
        x1, x2 = sorted((gt.x1 + e[0], gt.x2 + e[2]))
        y1, y2 = sorted((gt.y1 + e[1], gt.y2 + e[3]))
        anchors.append(BoundingBox(x1, y1, x2, y2))
    stage = halving_stage(gts)
    one = single_stage_refine(
        anchors, stage, image_width=width, image_height=height, top_n=num_boxes
    )
    two = cascade_refine(
        anchors, stage, stage, image_width=width, image_height=height, top_n=num_boxes
    )
    return {
        "one_stage": recall_at_iou([b for b, _ in one], gts, thresholds),
        "two_stage": recall_at_iou([b for b, _ in two], gts, thresholds),
    }
