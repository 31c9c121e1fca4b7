"""Axis-aligned bounding box arithmetic.

Boxes use the continuous ``(x1, y1, x2, y2)`` corner convention with
``area = (x2 - x1) * (y2 - y1)`` and no pixel-center correction. Regression
offsets follow the standard R-CNN parameterization: center shifts normalized
by the source box size plus log scale ratios.

Everything here is a pure function on immutable values, so all operations
are safe for unrestricted parallel use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# decode_delta rejects scale offsets beyond this bound instead of silently
# producing enormous boxes
MAX_SCALE_DELTA = 10.0


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with ``x2 >= x1`` and ``y2 >= y1``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"box coordinate {name} must be finite")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(
                f"invalid box corners ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class BoxDelta:
    """Box regression offsets.

    ``tx, ty`` are center shifts normalized by the source width/height and
    ``tw, th`` are log ratios of target size over source size.
    """

    tx: float
    ty: float
    tw: float
    th: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tx, self.ty, self.tw, self.th)


ZERO_DELTA = BoxDelta(0.0, 0.0, 0.0, 0.0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes.

    Returns 0.0 when the union has zero area (both boxes degenerate).
    """
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def boxes_to_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_matrix(boxes_a: Sequence[BoundingBox], boxes_b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise IoU matrix of shape ``(len(boxes_a), len(boxes_b))``.

    Entries with zero union area are 0.
    """
    a = boxes_to_array(boxes_a)
    b = boxes_to_array(boxes_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def encode_delta(source: BoundingBox, target: BoundingBox) -> BoxDelta:
    """Encode ``target`` relative to ``source``.

    ``tx = (tcx - scx) / sw``, ``ty = (tcy - scy) / sh``,
    ``tw = log(tw_ / sw)``, ``th = log(th_ / sh)``.

    Raises:
        ValueError: if either box has zero width or height (the log ratio
            and center normalization are undefined).
    """
    sw, sh = source.width, source.height
    if sw <= 0.0 or sh <= 0.0:
        raise ValueError("source box must have strictly positive size")
    tw_, th_ = target.width, target.height
    if tw_ <= 0.0 or th_ <= 0.0:
        raise ValueError("target box must have strictly positive size")
    scx, scy = source.center
    tcx, tcy = target.center
    return BoxDelta(
        (tcx - scx) / sw,
        (tcy - scy) / sh,
        math.log(tw_ / sw),
        math.log(th_ / sh),
    )


def decode_delta(
    source: BoundingBox,
    delta: BoxDelta,
    max_scale_delta: float = MAX_SCALE_DELTA,
) -> BoundingBox:
    """Apply regression offsets to ``source``; exact inverse of :func:`encode_delta`.

    Raises:
        ValueError: if the source is degenerate or ``|tw|``/``|th|`` exceeds
            ``max_scale_delta`` (exp overflow guard).
    """
    sw, sh = source.width, source.height
    if sw <= 0.0 or sh <= 0.0:
        raise ValueError("source box must have strictly positive size")
    if abs(delta.tw) > max_scale_delta or abs(delta.th) > max_scale_delta:
        raise ValueError(
            f"scale offset out of range (+-{max_scale_delta}): ({delta.tw}, {delta.th})"
        )
    scx, scy = source.center
    cx = scx + delta.tx * sw
    cy = scy + delta.ty * sh
    w = math.exp(delta.tw) * sw
    h = math.exp(delta.th) * sh
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def clip(box: BoundingBox, width: float, height: float) -> BoundingBox:
    """Clamp box corners to the image rectangle ``[0, width] x [0, height]``.

    A box fully outside becomes a zero-area box on the boundary.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    return BoundingBox(
        min(max(box.x1, 0.0), float(width)),
        min(max(box.y1, 0.0), float(height)),
        min(max(box.x2, 0.0), float(width)),
        min(max(box.y2, 0.0), float(height)),
    )


def nms(dets: Sequence[tuple[BoundingBox, float]], threshold: float) -> list[int]:
    """Greedy non-maximum suppression.

    Boxes are visited in descending score order (ties broken by original
    index); a box is suppressed when its IoU with an already kept box
    exceeds ``threshold``.

    Returns:
        Indices of kept entries, in descending score order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"nms threshold must be in [0, 1], got {threshold}")
    if not dets:
        return []
    boxes = boxes_to_array([b for b, _ in dets])
    scores = np.array([s for _, s in dets], dtype=np.float64)
    n = len(dets)
    # primary key: score descending; secondary: original index ascending
    order = np.lexsort((np.arange(n), -scores))
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    suppressed = np.zeros(n, dtype=bool)
    kept: list[int] = []
    for idx in order:
        if suppressed[idx]:
            continue
        kept.append(int(idx))
        lt = np.maximum(boxes[idx, :2], boxes[:, :2])
        rb = np.minimum(boxes[idx, 2:], boxes[:, 2:])
        wh = np.clip(rb - lt, 0.0, None)
        inter = wh[:, 0] * wh[:, 1]
        union = areas[idx] + areas - inter
        ious = np.zeros(n)
        np.divide(inter, union, out=ious, where=union > 0)
        suppressed |= ious > threshold
    return kept
