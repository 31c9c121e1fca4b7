"""Linking per-frame detections into action tubes.

Consecutive-frame detections of one class are chained by dynamic
programming. The weight of a link between detections ``a`` (frame t) and
``b`` (frame t+1) is::

    (1 - beta) * (score(a) + score(b)) + beta * iou(a, b)

so a path trades off detection confidence against spatial continuity;
``beta`` defaults to 0.7. The best path per run of frames is extracted, its
detections removed, and the process repeats until a score floor or a tube
cap is hit.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .geometry import BoundingBox, iou


@dataclass(frozen=True)
class Detection:
    """A scored, classified box on a single frame.

    ``motion`` optionally carries the observed center displacement from the
    previous frame (used by anticipation, ignored by linking itself).
    """

    box: BoundingBox
    class_id: int
    score: float
    motion: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


@dataclass(frozen=True)
class FrameDetections:
    """All detections on one frame."""

    frame_index: int
    detections: tuple[Detection, ...]

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


@dataclass(frozen=True)
class LinkingParams:
    """Weights for the link score; ``beta`` balances overlap vs confidence."""

    beta: float = 0.7

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class ActionTube:
    """A per-frame box sequence for one action instance.

    Covers the inclusive frame range ``[start_frame, end_frame]`` with one
    box and one score per frame.
    """

    class_id: int
    start_frame: int
    boxes: tuple[BoundingBox, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.boxes:
            raise ValueError("a tube needs at least one frame")
        if len(self.boxes) != len(self.scores):
            raise ValueError("boxes and scores must align one per frame")
        if self.start_frame < 0:
            raise ValueError("start_frame must be non-negative")
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.boxes) - 1

    @property
    def length(self) -> int:
        return len(self.boxes)

    @property
    def tube_score(self) -> float:
        return statistics.fmean(self.scores)

    def box_at(self, frame_index: int) -> BoundingBox:
        if not self.start_frame <= frame_index <= self.end_frame:
            raise KeyError(f"frame {frame_index} outside tube range")
        return self.boxes[frame_index - self.start_frame]


def linking_score(a: Detection, b: Detection, params: LinkingParams) -> float:
    """Edge weight between same-class detections on consecutive frames.

    Raises:
        ValueError: when the detections disagree on class.
    """
    if a.class_id != b.class_id:
        raise ValueError(
            f"cannot link detections of different classes ({a.class_id} vs {b.class_id})"
        )
    return (1.0 - params.beta) * (a.score + b.score) + params.beta * iou(a.box, b.box)


def tube_link_scores(tube: ActionTube, params: LinkingParams) -> list[float]:
    """Link score of each consecutive frame pair along a tube (length - 1 values)."""
    out = []
    for i in range(len(tube.boxes) - 1):
        edge = (1.0 - params.beta) * (tube.scores[i] + tube.scores[i + 1])
        edge += params.beta * iou(tube.boxes[i], tube.boxes[i + 1])
        out.append(edge)
    return out


def viterbi_link(
    frames: Sequence[Sequence[Detection]], params: LinkingParams
) -> tuple[list[int], float]:
    """Best path through per-frame candidate lists.

    ``frames[t]`` holds the candidates for the t-th consecutive frame; every
    frame must offer at least one. The returned path maximizes the summed
    link score over consecutive pairs; among equally good paths the
    lexicographically smallest index sequence wins. The score of a
    single-frame path is the chosen detection's own score (there are no
    links to sum).

    Returns:
        ``(indices, total)`` where ``indices[t]`` selects from ``frames[t]``.
    """
    if not frames:
        raise ValueError("cannot link an empty frame sequence")
    for t, frame in enumerate(frames):
        if not frame:
            raise ValueError(f"frame {t} has no candidate detections")
    n_frames = len(frames)
    if n_frames == 1:
        # no links; fall back to confidence, lowest index on ties
        best = max(range(len(frames[0])), key=lambda i: (frames[0][i].score, -i))
        return [best], frames[0][best].score

    # value[t][j]: best achievable sum of link scores from frame t to the end,
    # starting at candidate j; filled back to front
    value: list[list[float]] = [[0.0] * len(f) for f in frames]
    for t in range(n_frames - 2, -1, -1):
        nxt = frames[t + 1]
        for j, det in enumerate(frames[t]):
            best = -float("inf")
            for k, det_next in enumerate(nxt):
                cand = linking_score(det, det_next, params) + value[t + 1][k]
                if cand > best:
                    best = cand
            value[t][j] = best

    # walk forward, preferring the lowest index among optimal continuations
    start = 0
    for j in range(1, len(frames[0])):
        if value[0][j] > value[0][start]:
            start = j
    path = [start]
    for t in range(n_frames - 1):
        j = path[-1]
        chosen = 0
        best = -float("inf")
        for k, det_next in enumerate(frames[t + 1]):
            cand = linking_score(frames[t][j], det_next, params) + value[t + 1][k]
            if cand > best:
                best = cand
                chosen = k
        path.append(chosen)
    return path, value[0][start]


def _runs(frame_indices: Iterable[int]) -> list[list[int]]:
    """Split sorted frame indices into maximal consecutive runs."""
    runs: list[list[int]] = []
    for idx in sorted(frame_indices):
        if runs and idx == runs[-1][-1] + 1:
            runs[-1].append(idx)
        else:
            runs.append([idx])
    return runs


def extract_tubes(
    video: Sequence[FrameDetections],
    params: LinkingParams = LinkingParams(),
    *,
    max_tubes_per_class: int = 10,
    min_mean_link_score: float = 0.1,
) -> list[ActionTube]:
    """Iteratively pull the best tubes out of a video's detections.

    Per class, detections are grouped into maximal runs of consecutive
    frames (a frame with no detection of the class breaks the run). The
    best path over any run — ranked by mean per-link score so a strong long
    tube always beats stray single-frame noise — is extracted, its
    detections are removed, and the affected run is re-split; extraction
    stops once the best remaining path drops below ``min_mean_link_score``
    or the class has ``max_tubes_per_class`` tubes.

    Output is sorted by (class, start frame, score descending).
    """
    if max_tubes_per_class < 1:
        raise ValueError("max_tubes_per_class must be at least 1")
    seen_frames = set()
    for fd in video:
        if fd.frame_index in seen_frames:
            raise ValueError(f"duplicate frame_index {fd.frame_index}")
        seen_frames.add(fd.frame_index)

    class_ids = sorted(
        {det.class_id for fd in video for det in fd.detections}
    )
    tubes: list[ActionTube] = []
    for class_id in class_ids:
        remaining: dict[int, list[Detection]] = {}
        for fd in video:
            dets = [d for d in fd.detections if d.class_id == class_id]
            if dets:
                remaining[fd.frame_index] = dets

        def solve(run: list[int]) -> tuple[float, list[int], float]:
            frames = [remaining[f] for f in run]
            path, total = viterbi_link(frames, params)
            mean_link = total if len(run) == 1 else total / (len(run) - 1)
            return mean_link, path, total

        # candidate per run: (mean link score, run frames, best path)
        candidates = [(run, solve(run)) for run in _runs(remaining.keys())]
        emitted = 0
        while candidates and emitted < max_tubes_per_class:
            # strongest path first; ties fall to the earlier, longer run
            candidates.sort(key=lambda c: (-c[1][0], c[0][0], -len(c[0])))
            run, (mean_link, path, _) = candidates.pop(0)
            if mean_link < min_mean_link_score:
                break  # every remaining path is at least as weak
            chosen = [remaining[f][path[t]] for t, f in enumerate(run)]
            tubes.append(
                ActionTube(
                    class_id=class_id,
                    start_frame=run[0],
                    boxes=tuple(d.box for d in chosen),
                    scores=tuple(d.score for d in chosen),
                )
            )
            emitted += 1
            leftover: list[int] = []
            for t, frame_idx in enumerate(run):
                frame = remaining[frame_idx]
                frame.pop(path[t])
                if frame:
                    leftover.append(frame_idx)
                else:
                    del remaining[frame_idx]
            candidates.extend(
                (sub, solve(sub)) for sub in _runs(leftover)
            )
    tubes.sort(key=lambda tb: (tb.class_id, tb.start_frame, -tb.tube_score))
    return tubes
