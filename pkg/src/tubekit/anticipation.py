"""Box-motion anticipation: predict where a box will be a few frames ahead.

A small linear model maps a detection's normalized geometry and motion
descriptor to box-regression offsets targeting the matching object ``gap``
frames later. Predicted boxes are injected as extra proposal candidates so
the proposal stage keeps tracking objects that moved.

The training objective is a smooth L1 regression loss averaged over the
whole batch but accumulated only on positive samples; because the model is
linear the objective is convex and plain full-batch gradient descent
converges without any stochastic machinery.

Two trivial fallback strategies share the same entry point: ``"none"``
(anticipate nothing) and ``"non-motion"`` (assume zero motion across the
gap, i.e. repeat the current box).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .geometry import (
    MAX_SCALE_DELTA,
    BoundingBox,
    BoxDelta,
    clip,
    decode_delta,
    encode_delta,
)
from .proposals import assign_samples

Motion = tuple[float, float]
FEATURE_DIM = 6

STRATEGY_NONE = "none"
STRATEGY_NON_MOTION = "non-motion"
STRATEGY_LEARNED = "learned"
STRATEGIES = (STRATEGY_NONE, STRATEGY_NON_MOTION, STRATEGY_LEARNED)


def smooth_l1(x):
    """Smooth L1: ``0.5 x**2`` for ``|x| < 1``, else ``|x| - 0.5``.

    Accepts scalars or arrays.
    """
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * np.square(x), ax - 0.5)


def smooth_l1_grad(x):
    """Derivative of :func:`smooth_l1`: ``x`` for ``|x| < 1``, else ``sign(x)``."""
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def anticipation_loss(
    predictions: np.ndarray, targets: np.ndarray, positive: np.ndarray
) -> float:
    """Batch regression loss.

    ``(1/N) * sum_i positive_i * sum_c smooth_l1(pred_ic - target_ic)``
    where ``N`` is the total number of rows (positives and negatives alike).
    Negative rows contribute nothing to the numerator but still count in the
    normalizer.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    n = predictions.shape[0]
    if n == 0:
        raise ValueError("loss is undefined on an empty batch")
    if predictions.shape != targets.shape or predictions.shape != (n, 4):
        raise ValueError("predictions and targets must both have shape (N, 4)")
    if positive.shape != (n,):
        raise ValueError("positive mask must have shape (N,)")
    per_box = smooth_l1(predictions - targets).sum(axis=1)
    return float((positive * per_box).sum() / n)


def anticipation_loss_grad(
    predictions: np.ndarray, targets: np.ndarray, positive: np.ndarray
) -> np.ndarray:
    """Gradient of :func:`anticipation_loss` with respect to ``predictions``.

    Row ``i`` is ``positive_i / N * smooth_l1_grad(pred_i - target_i)``.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    n = predictions.shape[0]
    if n == 0:
        raise ValueError("gradient is undefined on an empty batch")
    return positive[:, None] / n * smooth_l1_grad(predictions - targets)


def feature_vector(
    box: BoundingBox, motion: Motion, image_width: float, image_height: float
) -> np.ndarray:
    """Six features describing a detection: normalized center, log size, motion.

    Raises:
        ValueError: for degenerate boxes (log size undefined).
    """
    if box.width <= 0.0 or box.height <= 0.0:
        raise ValueError("feature vector needs a box with positive size")
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    cx, cy = box.center
    return np.array(
        [
            cx / image_width,
            cy / image_height,
            math.log(box.width),
            math.log(box.height),
            float(motion[0]),
            float(motion[1]),
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class TrainingSet:
    """Flattened training rows for the anticipation model."""

    features: np.ndarray  # (N, 6) raw (unstandardized) features
    targets: np.ndarray  # (N, 4) encoded offsets; zero rows where not positive
    positive: np.ndarray  # (N,) bool

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if self.features.shape != (n, FEATURE_DIM):
            raise ValueError(f"features must be (N, {FEATURE_DIM})")
        if self.targets.shape != (n, 4) or self.positive.shape != (n,):
            raise ValueError("targets must be (N, 4) and positive (N,)")

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def build_training_set(
    frame_pairs: Sequence[
        tuple[Sequence[tuple[BoundingBox, Motion]], Sequence[BoundingBox]]
    ],
    *,
    image_width: float,
    image_height: float,
    positive_threshold: float = 0.7,
    negative_threshold: float = 0.3,
) -> TrainingSet:
    """Turn (detections-now, true-boxes-later) frame pairs into training rows.

    Each detection becomes one row; it is positive when IoU-matched to a
    future box (the usual thresholding plus a best-candidate override that
    keeps every future box matched to its highest-IoU detection, so slow
    overlap decay at long gaps cannot starve training of positives). The
    regression target for a positive row encodes the matched future box
    relative to the detection box.
    """
    feats: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    positive: list[bool] = []
    for detections, future_boxes in frame_pairs:
        if not detections:
            continue
        boxes = [b for b, _ in detections]
        assignment = assign_samples(
            boxes,
            list(future_boxes),
            positive_threshold=positive_threshold,
            negative_threshold=negative_threshold,
        )
        for i, (box, motion) in enumerate(detections):
            if box.width <= 0.0 or box.height <= 0.0:
                continue
            feats.append(feature_vector(box, motion, image_width, image_height))
            if assignment.labels[i] == 1:
                matched = future_boxes[int(assignment.matched_gt[i])]
                targets.append(
                    np.array(encode_delta(box, matched).as_tuple(), dtype=np.float64)
                )
                positive.append(True)
            else:
                targets.append(np.zeros(4, dtype=np.float64))
                positive.append(False)
    if not feats:
        return TrainingSet(
            features=np.zeros((0, FEATURE_DIM)),
            targets=np.zeros((0, 4)),
            positive=np.zeros(0, dtype=bool),
        )
    return TrainingSet(
        features=np.stack(feats),
        targets=np.stack(targets),
        positive=np.array(positive, dtype=bool),
    )


@dataclass(frozen=True)
class AnticipationModel:
    """Linear box-offset predictor over standardized features.

    ``offsets = weights @ standardize(features) + bias``; the scale
    components of the prediction are clamped so decoding can never
    overflow.
    """

    weights: np.ndarray  # (4, 6)
    bias: np.ndarray  # (4,)
    gap: int
    feature_mean: np.ndarray  # (6,)
    feature_scale: np.ndarray  # (6,)
    loss_history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.weights.shape != (4, FEATURE_DIM):
            raise ValueError(f"weights must be (4, {FEATURE_DIM})")
        if self.bias.shape != (4,):
            raise ValueError("bias must be (4,)")
        if self.feature_mean.shape != (FEATURE_DIM,) or self.feature_scale.shape != (
            FEATURE_DIM,
        ):
            raise ValueError(f"feature stats must be ({FEATURE_DIM},)")
        if self.gap < 1:
            raise ValueError("gap must be at least 1 frame")
        if np.any(self.feature_scale <= 0):
            raise ValueError("feature scales must be positive")

    def predict_delta(
        self, box: BoundingBox, motion: Motion, image_width: float, image_height: float
    ) -> BoxDelta:
        phi = feature_vector(box, motion, image_width, image_height)
        phi = (phi - self.feature_mean) / self.feature_scale
        raw = self.weights @ phi + self.bias
        bound = MAX_SCALE_DELTA
        return BoxDelta(
            float(raw[0]),
            float(raw[1]),
            float(np.clip(raw[2], -bound, bound)),
            float(np.clip(raw[3], -bound, bound)),
        )

    def predict_box(
        self, box: BoundingBox, motion: Motion, image_width: float, image_height: float
    ) -> BoundingBox:
        delta = self.predict_delta(box, motion, image_width, image_height)
        return clip(decode_delta(box, delta), image_width, image_height)

    def to_dict(self) -> dict:
        return {
            "gap": self.gap,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnticipationModel":
        try:
            return cls(
                weights=np.asarray(data["weights"], dtype=np.float64),
                bias=np.asarray(data["bias"], dtype=np.float64),
                gap=int(data["gap"]),
                feature_mean=np.asarray(data["feature_mean"], dtype=np.float64),
                feature_scale=np.asarray(data["feature_scale"], dtype=np.float64),
            )
        except KeyError as exc:
            raise ValueError(f"model file missing field {exc.args[0]!r}") from exc

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AnticipationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_anticipation_model(
    training_set: TrainingSet,
    gap: int,
    *,
    epochs: int = 1500,
    learning_rate: float = 0.5,
) -> AnticipationModel:
    """Fit the linear predictor by full-batch gradient descent.

    Features are standardized with statistics from the training set
    (constant columns get unit scale). Weights start at zero; the problem is
    convex so no restarts or stochasticity are needed.

    Raises:
        ValueError: when the training set has no positive rows.
    """
    if training_set.num_positive == 0:
        raise ValueError("cannot train without positive samples")
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    feats = training_set.features
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale = np.where(scale < 1e-8, 1.0, scale)
    phi = (feats - mean) / scale
    targets = training_set.targets
    positive = training_set.positive.astype(np.float64)

    weights = np.zeros((4, FEATURE_DIM))
    bias = np.zeros(4)
    history: list[float] = []
    for _ in range(epochs):
        pred = phi @ weights.T + bias
        history.append(anticipation_loss(pred, targets, positive))
        grad_pred = anticipation_loss_grad(pred, targets, positive)  # (N, 4)
        weights -= learning_rate * grad_pred.T @ phi
        bias -= learning_rate * grad_pred.sum(axis=0)
    return AnticipationModel(
        weights=weights,
        bias=bias,
        gap=gap,
        feature_mean=mean,
        feature_scale=scale,
        loss_history=tuple(history),
    )


def anticipate(
    strategy: Union[str, AnticipationModel],
    detections: Sequence[tuple[BoundingBox, Motion]],
    *,
    image_width: float,
    image_height: float,
) -> list[BoundingBox]:
    """Predict future boxes for a set of detections.

    ``strategy`` is a trained :class:`AnticipationModel` or one of the
    strings ``"none"`` (returns no boxes) and ``"non-motion"`` (returns the
    current boxes unchanged, i.e. a zero-motion assumption). Degenerate
    boxes are skipped; outputs are clipped to the image.
    """
    if isinstance(strategy, str):
        if strategy == STRATEGY_NONE:
            return []
        if strategy == STRATEGY_NON_MOTION:
            return [
                clip(box, image_width, image_height) for box, _ in detections
            ]
        raise ValueError(
            f"unknown strategy {strategy!r}; expected one of {STRATEGIES} or a model"
        )
    out: list[BoundingBox] = []
    for box, motion in detections:
        if box.width <= 0.0 or box.height <= 0.0:
            continue
        out.append(strategy.predict_box(box, motion, image_width, image_height))
    return out


def augment_proposals(
    proposals: Sequence[BoundingBox], anticipated: Sequence[BoundingBox]
) -> list[BoundingBox]:
    """Append anticipated boxes to a proposal set, skipping exact duplicates.

    Existing proposals are kept untouched and in order; an anticipated box
    is added only if its corner tuple is not already present.
    """
    out = list(proposals)
    seen = {box.as_tuple() for box in proposals}
    for box in anticipated:
        key = box.as_tuple()
        if key in seen:
            continue
        seen.add(key)
        out.append(box)
    return out
