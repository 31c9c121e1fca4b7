import json

import pytest

from tubekit.geometry import BoundingBox
from tubekit.linking import ActionTube, Detection, FrameDetections
from tubekit.synthdata import ActorSpec, NoiseModel, SceneSpec
from tubekit.formats import (
    FORMAT_VERSION,
    SchemaError,
    detections_from_dict,
    detections_to_dict,
    load_detections,
    load_scene_spec,
    load_tubes,
    read_json,
    scene_spec_from_dict,
    scene_spec_to_dict,
    tubes_from_dict,
    tubes_to_dict,
    write_json,
)


def sample_spec():
    return SceneSpec(
        video_id="clip-1",
        width=320,
        height=240,
        num_frames=50,
        actors=(
            ActorSpec(
                class_id=0,
                entry_frame=0,
                exit_frame=49,
                box=BoundingBox(10, 10, 50, 50),
                velocity=(1.5, -0.5),
                velocity_sigma=0.25,
            ),
            ActorSpec(
                class_id=3,
                entry_frame=5,
                exit_frame=30,
                box=BoundingBox(100, 100, 140, 160),
            ),
        ),
        noise=NoiseModel(sigma_loc=1.0, miss_rate=0.1, fp_rate=0.4),
        seed=12,
    )


def sample_frames():
    return [
        FrameDetections(
            frame_index=0,
            detections=(
                Detection(
                    box=BoundingBox(1, 2, 11, 12),
                    class_id=0,
                    score=0.75,
                    motion=(1.0, -0.5),
                ),
                Detection(box=BoundingBox(5, 5, 25, 25), class_id=1, score=0.25),
            ),
        ),
        FrameDetections(frame_index=2, detections=()),
        FrameDetections(
            frame_index=5,
            detections=(
                Detection(box=BoundingBox(3, 2, 13, 12), class_id=0, score=0.5),
            ),
        ),
    ]


def sample_tubes():
    return {
        "clip-1": [
            ActionTube(
                class_id=0,
                start_frame=4,
                boxes=(BoundingBox(0, 0, 10, 10), BoundingBox(2, 0, 12, 10)),
                scores=(0.9, 0.7),
            )
        ],
        "clip-2": [
            ActionTube(
                class_id=1,
                start_frame=0,
                boxes=(BoundingBox(50, 50, 80, 90),),
                scores=(0.4,),
            )
        ],
    }


class TestSceneSpecIO:
    def test_round_trip(self, tmp_path):
        spec = sample_spec()
        path = tmp_path / "spec.json"
        write_json(path, scene_spec_to_dict(spec))
        assert load_scene_spec(path) == spec

    def test_velocity_defaults_to_zero(self):
        data = scene_spec_to_dict(sample_spec())
        del data["actors"][0]["velocity"]
        del data["actors"][0]["velocity_sigma"]
        spec = scene_spec_from_dict(data)
        assert spec.actors[0].velocity == (0.0, 0.0)
        assert spec.actors[0].velocity_sigma == 0.0

    def test_missing_field_names_path(self):
        data = scene_spec_to_dict(sample_spec())
        del data["actors"][1]["entry_frame"]
        with pytest.raises(SchemaError, match=r"\$\.actors\[1\]"):
            scene_spec_from_dict(data)

    def test_semantic_error_names_path(self):
        data = scene_spec_to_dict(sample_spec())
        data["actors"][0]["exit_frame"] = 500  # beyond num_frames
        with pytest.raises(SchemaError):
            scene_spec_from_dict(data)

    def test_wrong_version_rejected(self):
        data = scene_spec_to_dict(sample_spec())
        data["format_version"] = 99
        with pytest.raises(SchemaError, match="format_version"):
            scene_spec_from_dict(data)

    def test_bad_box_rejected(self):
        data = scene_spec_to_dict(sample_spec())
        data["actors"][0]["box"] = [10, 10, 50]
        with pytest.raises(SchemaError, match=r"actors\[0\]\.box"):
            scene_spec_from_dict(data)


class TestDetectionsIO:
    def test_round_trip(self, tmp_path):
        frames = sample_frames()
        path = tmp_path / "dets.json"
        write_json(path, detections_to_dict("vid-7", frames))
        video_id, loaded = load_detections(path)
        assert video_id == "vid-7"
        assert loaded == frames

    def test_motion_is_optional(self):
        data = detections_to_dict("v", sample_frames())
        assert "motion" in data["frames"][0]["detections"][0]
        assert "motion" not in data["frames"][0]["detections"][1]
        _, loaded = detections_from_dict(data)
        assert loaded[0].detections[0].motion == (1.0, -0.5)
        assert loaded[0].detections[1].motion is None

    def test_frame_indices_must_increase(self):
        data = detections_to_dict("v", sample_frames())
        data["frames"][1]["frame_index"] = 0
        with pytest.raises(SchemaError, match="strictly increasing"):
            detections_from_dict(data)

    def test_missing_score_names_exact_path(self):
        data = detections_to_dict("v", sample_frames())
        del data["frames"][0]["detections"][1]["score"]
        with pytest.raises(SchemaError, match=r"\$\.frames\[0\]\.detections\[1\]"):
            detections_from_dict(data)

    def test_score_out_of_range_surfaces_as_schema_error(self):
        data = detections_to_dict("v", sample_frames())
        data["frames"][0]["detections"][0]["score"] = 1.5
        with pytest.raises(SchemaError):
            detections_from_dict(data)

    def test_boolean_is_not_a_number(self):
        data = detections_to_dict("v", sample_frames())
        data["frames"][0]["detections"][0]["score"] = True
        with pytest.raises(SchemaError):
            detections_from_dict(data)

    def test_frames_serialized_in_order(self):
        frames = list(reversed(sample_frames()))
        data = detections_to_dict("v", frames)
        indices = [f["frame_index"] for f in data["frames"]]
        assert indices == sorted(indices)


class TestTubesIO:
    def test_round_trip(self, tmp_path):
        tubes = sample_tubes()
        path = tmp_path / "tubes.json"
        write_json(path, tubes_to_dict(tubes))
        loaded = load_tubes(path)
        assert set(loaded) == set(tubes)
        for vid in tubes:
            assert loaded[vid] == tubes[vid]

    def test_box_count_must_match_span(self):
        data = tubes_to_dict(sample_tubes())
        data["tubes"][0]["end"] += 3
        with pytest.raises(SchemaError, match="boxes"):
            tubes_from_dict(data)

    def test_missing_scores_spread_aggregate(self):
        data = tubes_to_dict(sample_tubes())
        entry = data["tubes"][0]
        del entry["scores"]
        loaded = tubes_from_dict(data)
        (tube,) = [t for ts in loaded.values() for t in ts if t.length == 2]
        assert tube.scores == (tube.tube_score, tube.tube_score)

    def test_score_list_length_checked(self):
        data = tubes_to_dict(sample_tubes())
        data["tubes"][0]["scores"] = [0.5]
        with pytest.raises(SchemaError, match="scores"):
            tubes_from_dict(data)

    def test_inverted_span_rejected(self):
        data = tubes_to_dict(sample_tubes())
        data["tubes"][0]["start"] = data["tubes"][0]["end"] + 5
        with pytest.raises(SchemaError):
            tubes_from_dict(data)

    def test_entries_sorted_by_video_then_class(self):
        data = tubes_to_dict(sample_tubes())
        vids = [t["video_id"] for t in data["tubes"]]
        assert vids == sorted(vids)


class TestJsonPlumbing:
    def test_written_files_are_canonical(self, tmp_path):
        path = tmp_path / "out.json"
        write_json(path, {"b": 1, "a": 2, "format_version": FORMAT_VERSION})
        text = path.read_text()
        assert text.endswith("\n")
        keys = json.loads(text)
        assert list(keys) == sorted(keys)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(SchemaError, match="cannot read"):
            read_json(tmp_path / "missing.json")

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"a": 1,}')
        with pytest.raises(SchemaError, match="line 1"):
            read_json(path)

    def test_non_object_top_level(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(SchemaError, match="object"):
            read_json(path)

    def test_schema_error_is_a_value_error(self):
        assert issubclass(SchemaError, ValueError)
