"""JSON file formats shared by the command-line tools.

Three schemas, all versioned with a ``format_version`` field:

* scene spec — input to ``simulate``; mirrors :class:`~.synthdata.SceneSpec`.
* detection file — per-frame scored boxes (``bbox``, ``class_id``,
  ``score``, optional ``motion``), frame indices strictly increasing.
* tube file — flat list of tubes (``video_id``, ``class_id``, ``start``,
  ``end``, ``tube_score``, per-frame ``boxes`` and ``scores``).

Writers are canonical (sorted keys, fixed indentation) so identical data
produces identical bytes. Validation errors name the offending field path.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence, Union

from .geometry import BoundingBox
from .linking import ActionTube, Detection, FrameDetections
from .synthdata import ActorSpec, NoiseModel, SceneSpec

FORMAT_VERSION = 1


class SchemaError(ValueError):
    """A file does not conform to its declared schema."""


def _fail(path: str, message: str) -> None:
    raise SchemaError(f"{path}: {message}")


def _get(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        _fail(path, f"missing required field '{key}'")
    return obj[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {type(value).__name__}")
    return value


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str):
        _fail(path, f"expected a string, got {type(value).__name__}")
    return value


def _array(value: Any, path: str) -> list:
    if not isinstance(value, list):
        _fail(path, f"expected an array, got {type(value).__name__}")
    return value


def _object(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        _fail(path, f"expected an object, got {type(value).__name__}")
    return value


def _box(value: Any, path: str) -> BoundingBox:
    arr = _array(value, path)
    if len(arr) != 4:
        _fail(path, f"expected [x1, y1, x2, y2], got {len(arr)} values")
    coords = [_number(v, f"{path}[{i}]") for i, v in enumerate(arr)]
    try:
        return BoundingBox(*coords)
    except ValueError as exc:
        _fail(path, str(exc))
    raise AssertionError("unreachable")


def _check_version(data: dict, path: str) -> None:
    version = _integer(_get(data, "format_version", path), f"{path}.format_version")
    if version != FORMAT_VERSION:
        _fail(f"{path}.format_version", f"unsupported version {version}")


def write_json(path: Union[str, Path], data: dict) -> None:
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def read_json(path: Union[str, Path]) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read file ({exc})") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")
    return data


# --------------------------------------------------------------------------
# scene specs
# --------------------------------------------------------------------------

def scene_spec_from_dict(data: dict, path: str = "$") -> SceneSpec:
    _check_version(data, path)
    actors = []
    actors_raw = _array(_get(data, "actors", path), f"{path}.actors")
    for i, actor_raw in enumerate(actors_raw):
        apath = f"{path}.actors[{i}]"
        actor = _object(actor_raw, apath)
        velocity_raw = _array(actor.get("velocity", [0.0, 0.0]), f"{apath}.velocity")
        if len(velocity_raw) != 2:
            _fail(f"{apath}.velocity", "expected [vx, vy]")
        try:
            actors.append(
                ActorSpec(
                    class_id=_integer(_get(actor, "class_id", apath), f"{apath}.class_id"),
                    entry_frame=_integer(
                        _get(actor, "entry_frame", apath), f"{apath}.entry_frame"
                    ),
                    exit_frame=_integer(
                        _get(actor, "exit_frame", apath), f"{apath}.exit_frame"
                    ),
                    box=_box(_get(actor, "box", apath), f"{apath}.box"),
                    velocity=(
                        _number(velocity_raw[0], f"{apath}.velocity[0]"),
                        _number(velocity_raw[1], f"{apath}.velocity[1]"),
                    ),
                    velocity_sigma=_number(
                        actor.get("velocity_sigma", 0.0), f"{apath}.velocity_sigma"
                    ),
                )
            )
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            _fail(apath, str(exc))
    noise_raw = _object(data.get("noise", {}), f"{path}.noise")
    noise_kwargs = {}
    for field_name in (
        "sigma_loc",
        "miss_rate",
        "fp_rate",
        "tp_score_mean",
        "tp_score_sigma",
        "fp_score_mean",
        "fp_score_sigma",
    ):
        if field_name in noise_raw:
            noise_kwargs[field_name] = _number(
                noise_raw[field_name], f"{path}.noise.{field_name}"
            )
    try:
        return SceneSpec(
            video_id=_string(_get(data, "video_id", path), f"{path}.video_id"),
            width=_integer(_get(data, "width", path), f"{path}.width"),
            height=_integer(_get(data, "height", path), f"{path}.height"),
            num_frames=_integer(_get(data, "num_frames", path), f"{path}.num_frames"),
            actors=tuple(actors),
            noise=NoiseModel(**noise_kwargs),
            seed=_integer(data.get("seed", 0), f"{path}.seed"),
        )
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        _fail(path, str(exc))
    raise AssertionError("unreachable")


def scene_spec_to_dict(spec: SceneSpec) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "video_id": spec.video_id,
        "width": spec.width,
        "height": spec.height,
        "num_frames": spec.num_frames,
        "seed": spec.seed,
        "actors": [
            {
                "class_id": a.class_id,
                "entry_frame": a.entry_frame,
                "exit_frame": a.exit_frame,
                "box": list(a.box.as_tuple()),
                "velocity": list(a.velocity),
                "velocity_sigma": a.velocity_sigma,
            }
            for a in spec.actors
        ],
        "noise": {
            "sigma_loc": spec.noise.sigma_loc,
            "miss_rate": spec.noise.miss_rate,
            "fp_rate": spec.noise.fp_rate,
            "tp_score_mean": spec.noise.tp_score_mean,
            "tp_score_sigma": spec.noise.tp_score_sigma,
            "fp_score_mean": spec.noise.fp_score_mean,
            "fp_score_sigma": spec.noise.fp_score_sigma,
        },
    }


def load_scene_spec(path: Union[str, Path]) -> SceneSpec:
    return scene_spec_from_dict(read_json(path), str(path))


# --------------------------------------------------------------------------
# detection files
# --------------------------------------------------------------------------

def detections_to_dict(video_id: str, frames: Sequence[FrameDetections]) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "video_id": video_id,
        "frames": [
            {
                "frame_index": fd.frame_index,
                "detections": [
                    {
                        "bbox": list(d.box.as_tuple()),
                        "class_id": d.class_id,
                        "score": d.score,
                        **({"motion": list(d.motion)} if d.motion is not None else {}),
                    }
                    for d in fd.detections
                ],
            }
            for fd in sorted(frames, key=lambda f: f.frame_index)
        ],
    }


def detections_from_dict(data: dict, path: str = "$") -> tuple[str, list[FrameDetections]]:
    _check_version(data, path)
    video_id = _string(_get(data, "video_id", path), f"{path}.video_id")
    frames: list[FrameDetections] = []
    previous_index = -1
    for i, frame_raw in enumerate(_array(_get(data, "frames", path), f"{path}.frames")):
        fpath = f"{path}.frames[{i}]"
        frame = _object(frame_raw, fpath)
        index = _integer(_get(frame, "frame_index", fpath), f"{fpath}.frame_index")
        if index <= previous_index:
            _fail(f"{fpath}.frame_index", "frame indices must be strictly increasing")
        previous_index = index
        dets = []
        for j, det_raw in enumerate(
            _array(_get(frame, "detections", fpath), f"{fpath}.detections")
        ):
            dpath = f"{fpath}.detections[{j}]"
            det = _object(det_raw, dpath)
            motion = None
            if "motion" in det:
                motion_raw = _array(det["motion"], f"{dpath}.motion")
                if len(motion_raw) != 2:
                    _fail(f"{dpath}.motion", "expected [dx, dy]")
                motion = (
                    _number(motion_raw[0], f"{dpath}.motion[0]"),
                    _number(motion_raw[1], f"{dpath}.motion[1]"),
                )
            try:
                dets.append(
                    Detection(
                        box=_box(_get(det, "bbox", dpath), f"{dpath}.bbox"),
                        class_id=_integer(
                            _get(det, "class_id", dpath), f"{dpath}.class_id"
                        ),
                        score=_number(_get(det, "score", dpath), f"{dpath}.score"),
                        motion=motion,
                    )
                )
            except ValueError as exc:
                if isinstance(exc, SchemaError):
                    raise
                _fail(dpath, str(exc))
        frames.append(FrameDetections(frame_index=index, detections=tuple(dets)))
    return video_id, frames


def load_detections(path: Union[str, Path]) -> tuple[str, list[FrameDetections]]:
    return detections_from_dict(read_json(path), str(path))


# --------------------------------------------------------------------------
# tube files
# --------------------------------------------------------------------------

def tubes_to_dict(tubes_by_video: dict[str, Sequence[ActionTube]]) -> dict:
    entries = []
    for video_id in sorted(tubes_by_video):
        for tube in sorted(
            tubes_by_video[video_id],
            key=lambda t: (t.class_id, t.start_frame, -t.tube_score),
        ):
            entries.append(
                {
                    "video_id": video_id,
                    "class_id": tube.class_id,
                    "start": tube.start_frame,
                    "end": tube.end_frame,
                    "tube_score": tube.tube_score,
                    "boxes": [list(b.as_tuple()) for b in tube.boxes],
                    "scores": list(tube.scores),
                }
            )
    return {"format_version": FORMAT_VERSION, "tubes": entries}


def tubes_from_dict(data: dict, path: str = "$") -> dict[str, list[ActionTube]]:
    _check_version(data, path)
    out: dict[str, list[ActionTube]] = {}
    for i, tube_raw in enumerate(_array(_get(data, "tubes", path), f"{path}.tubes")):
        tpath = f"{path}.tubes[{i}]"
        tube = _object(tube_raw, tpath)
        video_id = _string(_get(tube, "video_id", tpath), f"{tpath}.video_id")
        start = _integer(_get(tube, "start", tpath), f"{tpath}.start")
        end = _integer(_get(tube, "end", tpath), f"{tpath}.end")
        boxes = [
            _box(b, f"{tpath}.boxes[{k}]")
            for k, b in enumerate(_array(_get(tube, "boxes", tpath), f"{tpath}.boxes"))
        ]
        if end < start:
            _fail(tpath, f"start {start} exceeds end {end}")
        if len(boxes) != end - start + 1:
            _fail(
                f"{tpath}.boxes",
                f"expected {end - start + 1} boxes for frames [{start}, {end}], "
                f"got {len(boxes)}",
            )
        tube_score = _number(_get(tube, "tube_score", tpath), f"{tpath}.tube_score")
        if "scores" in tube:
            scores = [
                _number(s, f"{tpath}.scores[{k}]")
                for k, s in enumerate(_array(tube["scores"], f"{tpath}.scores"))
            ]
            if len(scores) != len(boxes):
                _fail(f"{tpath}.scores", "one score per frame required")
        else:
            # older writers only carried the aggregate; spread it per frame
            scores = [tube_score] * len(boxes)
        try:
            parsed = ActionTube(
                class_id=_integer(_get(tube, "class_id", tpath), f"{tpath}.class_id"),
                start_frame=start,
                boxes=tuple(boxes),
                scores=tuple(scores),
            )
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            _fail(tpath, str(exc))
            raise AssertionError("unreachable")
        out.setdefault(video_id, []).append(parsed)
    return out


def load_tubes(path: Union[str, Path]) -> dict[str, list[ActionTube]]:
    return tubes_from_dict(read_json(path), str(path))
