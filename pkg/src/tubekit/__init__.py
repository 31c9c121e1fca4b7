"""tubekit: action-tube detection pipeline on synthetic scenes.

Cascade box proposals, learned box-motion anticipation, Viterbi tube
linking, temporal trimming, and tube-level mAP evaluation, validated
end-to-end against controllable synthetic scenes instead of a CNN detector.
"""

from .geometry import BoundingBox, BoxDelta, clip, decode_delta, encode_delta, iou, nms
from .linking import (
    ActionTube,
    Detection,
    FrameDetections,
    LinkingParams,
    extract_tubes,
    linking_score,
    viterbi_link,
)

__version__ = "0.1.0"

__all__ = [
    "ActionTube",
    "BoundingBox",
    "BoxDelta",
    "Detection",
    "FrameDetections",
    "LinkingParams",
    "clip",
    "decode_delta",
    "encode_delta",
    "extract_tubes",
    "iou",
    "linking_score",
    "nms",
    "viterbi_link",
    "__version__",
]
