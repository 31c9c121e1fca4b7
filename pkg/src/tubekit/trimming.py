"""Temporal trimming of action tubes.

Linked tubes span every frame their actor was detected on, which usually
overshoots the actual action interval. Trimming picks the sub-interval that
maximizes the mean link score minus a penalty for deviating from the
class's typical duration::

    objective(s, e) = mean(link[s .. e-1]) - penalty(e - s)

where ``s`` and ``e`` are frame offsets within the tube (frames ``s..e``
inclusive, ``e - s`` links) and the typical duration is likewise measured
in links. The penalty is ``|(e-s) - avg| / avg`` by default, or the signed
variant ``((e-s) - avg) / avg`` which rewards intervals shorter than
average. All O(n^2) intervals are scored exactly; ties prefer the earliest
start, then the earliest end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .linking import ActionTube, LinkingParams, tube_link_scores

PENALTY_ABSOLUTE = "absolute"
PENALTY_SIGNED = "signed"
PENALTY_MODES = (PENALTY_ABSOLUTE, PENALTY_SIGNED)


@dataclass(frozen=True)
class TrimmingParams:
    """Per-class typical duration (in links) and the penalty flavor."""

    avg_length: Mapping[int, float]
    penalty_mode: str = PENALTY_ABSOLUTE

    def __post_init__(self) -> None:
        if self.penalty_mode not in PENALTY_MODES:
            raise ValueError(
                f"penalty_mode must be one of {PENALTY_MODES}, got {self.penalty_mode!r}"
            )
        for class_id, avg in self.avg_length.items():
            if avg <= 0:
                raise ValueError(
                    f"average length for class {class_id} must be positive, got {avg}"
                )


def avg_class_length(tubes: Sequence[ActionTube]) -> dict[int, float]:
    """Mean tube duration per class, measured in links (frames minus one).

    Single-frame tubes contribute zero; a class whose tubes are all
    single-frame ends up with average 0, which :class:`TrimmingParams`
    rejects — such a class carries no usable duration signal.
    """
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for tube in tubes:
        sums[tube.class_id] = sums.get(tube.class_id, 0.0) + (tube.length - 1)
        counts[tube.class_id] = counts.get(tube.class_id, 0) + 1
    return {c: sums[c] / counts[c] for c in sums}


def _penalty(num_links: int, avg: float, mode: str) -> float:
    dev = (num_links - avg) / avg
    return abs(dev) if mode == PENALTY_ABSOLUTE else dev


def trim_interval(
    link_scores: Sequence[float], avg_links: float, penalty_mode: str = PENALTY_ABSOLUTE
) -> tuple[tuple[int, int], float]:
    """Best frame interval ``(s, e)`` for a list of per-link scores.

    The interval keeps frames ``s..e`` inclusive, i.e. links
    ``link_scores[s:e]``; every interval with at least one link is scored.

    Returns:
        ``((s, e), objective)`` with ties resolved toward the earliest
        start, then the earliest end.

    Raises:
        ValueError: on an empty score list or non-positive ``avg_links``.
    """
    n = len(link_scores)
    if n == 0:
        raise ValueError("need at least one link score to trim")
    if avg_links <= 0:
        raise ValueError("average length must be positive")
    if penalty_mode not in PENALTY_MODES:
        raise ValueError(f"penalty_mode must be one of {PENALTY_MODES}")
    scores = [float(x) for x in link_scores]
    best_interval = (0, 1)
    best_obj = -float("inf")
    for s in range(n):
        window_sum = 0.0
        for e in range(s + 1, n + 1):
            window_sum += scores[e - 1]
            links = e - s
            obj = window_sum / links - _penalty(links, avg_links, penalty_mode)
            if obj > best_obj:
                best_obj = obj
                best_interval = (s, e)
    return best_interval, float(best_obj)


@dataclass(frozen=True)
class TrimResult:
    """Outcome of trimming one tube."""

    start_offset: int
    end_offset: int
    objective: float
    tube: ActionTube


def trim_tube(
    tube: ActionTube,
    params: TrimmingParams,
    link_params: LinkingParams = LinkingParams(),
) -> TrimResult:
    """Trim one tube to its best-scoring sub-interval.

    Link scores are recomputed from the tube's own boxes and scores using
    ``link_params``.

    Raises:
        ValueError: for single-frame tubes (no links to score) or when
            ``params`` lacks the tube's class.
    """
    if tube.length < 2:
        raise ValueError("cannot trim a single-frame tube; it has no links")
    if tube.class_id not in params.avg_length:
        raise ValueError(f"no average length configured for class {tube.class_id}")
    scores = tube_link_scores(tube, link_params)
    (s, e), objective = trim_interval(
        scores, params.avg_length[tube.class_id], params.penalty_mode
    )
    trimmed = replace(
        tube,
        start_frame=tube.start_frame + s,
        boxes=tube.boxes[s : e + 1],
        scores=tube.scores[s : e + 1],
    )
    return TrimResult(start_offset=s, end_offset=e, objective=objective, tube=trimmed)


def trim_tubes(
    tubes: Sequence[ActionTube],
    params: TrimmingParams,
    link_params: LinkingParams = LinkingParams(),
) -> list[ActionTube]:
    """Trim a batch of tubes; single-frame tubes pass through untouched."""
    out = []
    for tube in tubes:
        if tube.length < 2:
            out.append(tube)
        else:
            out.append(trim_tube(tube, params, link_params).tube)
    return out
