"""Dataset files, subsampling and target construction."""

import json

import numpy as np
import pytest

from models.annotations import (
    AnnotationFormat,
    AnnotationTrack,
    ImportanceCurve,
    KeyframeSet,
    Keyshots,
    Segmentation,
    Summary,
    VideoRecord,
)
from services.data_service import (
    FEATURE_MAGIC,
    TRANSFORM_MAGIC,
    DataService,
    consensus_keyframes,
    convert_track,
    decode_matrix,
    encode_matrix,
    load_dataset,
    read_summaries,
    read_transform,
    reference_keyshots,
    subsample,
    training_targets,
    write_dataset,
    write_summary,
    write_transform,
)
from models.adapt import LinearTransform
from utils.errors import ConfigurationError, ParseError, UsageError, VersionError


def _record(video_id="v1", n=12, tracks=None, fps=2.0, seg=None):
    features = np.arange(n * 2, dtype=np.float64).reshape(n, 2)
    return VideoRecord(video_id, fps, features, tracks or [], "toy", seg)


class TestMatrixCodec:
    def test_round_trip(self, rng):
        m = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(decode_matrix(encode_matrix(m)), m)

    def test_truncated_body(self):
        data = encode_matrix(np.ones((2, 2)))
        with pytest.raises(ParseError) as info:
            decode_matrix(data[:-5], video_id="v9")
        assert info.value.offset == len(data) - 5
        assert info.value.video_id == "v9"

    def test_short_header(self):
        with pytest.raises(ParseError) as info:
            decode_matrix(b"VSFT")
        assert info.value.offset == 4

    def test_wrong_magic(self):
        with pytest.raises(ParseError) as info:
            decode_matrix(encode_matrix(np.ones((1, 1)), TRANSFORM_MAGIC), FEATURE_MAGIC)
        assert info.value.offset == 0

    def test_unknown_version(self):
        data = bytearray(encode_matrix(np.ones((1, 1))))
        data[4] = 2
        with pytest.raises(VersionError):
            decode_matrix(bytes(data))

    def test_transform_sidecar(self, tmp_path):
        t = LinearTransform(np.diag([1.0, 2.0]), ("a", "b"), 0.01)
        path = write_transform(tmp_path / "a_to_b.vstf", t)
        restored = read_transform(path)
        np.testing.assert_array_equal(restored.matrix, t.matrix)
        assert restored.fitted_on == ("a", "b")
        assert restored.ridge == pytest.approx(0.01)

    def test_missing_transform(self, tmp_path):
        with pytest.raises(ParseError) as info:
            read_transform(tmp_path / "absent.vstf")
        assert info.value.field == "transform"

    def test_broken_transform_sidecar(self, tmp_path):
        path = write_transform(tmp_path / "a_to_b.vstf", LinearTransform(np.eye(2)))
        (tmp_path / "a_to_b.vstf.json").write_text("{oops")
        with pytest.raises(ParseError):
            read_transform(path)


class TestDatasetFiles:
    def test_write_and_load(self, tmp_path):
        tracks = [
            AnnotationTrack(KeyframeSet((2, 7), 12), "u1"),
            AnnotationTrack(Keyshots(((0, 3),), 12), "u2"),
            AnnotationTrack(ImportanceCurve(np.linspace(0, 1, 12))),
        ]
        manifest = write_dataset([_record(tracks=tracks, seg=Segmentation((0, 5), 12))], tmp_path, "toy")
        (record,) = load_dataset(manifest)
        assert record.video_id == "v1" and record.source_dataset == "toy"
        assert [t.format for t in record.annotations] == [
            AnnotationFormat.KEYFRAMES,
            AnnotationFormat.KEYSHOTS,
            AnnotationFormat.SCORES,
        ]
        assert record.annotations[0].annotator == "u1"
        assert record.annotations[1].data == tracks[1].data
        assert record.segmentation == Segmentation((0, 5), 12)
        np.testing.assert_array_equal(record.features, _record().features)

    def test_load_from_directory(self, tmp_path):
        write_dataset([_record()], tmp_path, "toy")
        assert len(load_dataset(tmp_path)) == 1

    def test_curve_length_mismatch_names_video(self, tmp_path):
        write_dataset([_record(tracks=[AnnotationTrack(ImportanceCurve(np.zeros(12)))])], tmp_path, "toy")
        track_file = tmp_path / "annotations" / "v1.0.scores.json"
        obj = json.loads(track_file.read_text())
        obj["values"] = obj["values"][:-1]
        track_file.write_text(json.dumps(obj))
        with pytest.raises(ParseError) as info:
            load_dataset(tmp_path)
        assert info.value.video_id == "v1"

    def test_track_frame_count_mismatch(self, tmp_path):
        write_dataset([_record(tracks=[AnnotationTrack(KeyframeSet((1,), 12))])], tmp_path, "toy")
        track_file = tmp_path / "annotations" / "v1.0.keyframes.json"
        obj = json.loads(track_file.read_text())
        obj["n_frames"] = 20
        track_file.write_text(json.dumps(obj))
        with pytest.raises(ParseError) as info:
            load_dataset(tmp_path)
        assert info.value.video_id == "v1"

    def test_keyframe_out_of_range(self, tmp_path):
        write_dataset([_record(tracks=[AnnotationTrack(KeyframeSet((1,), 12))])], tmp_path, "toy")
        track_file = tmp_path / "annotations" / "v1.0.keyframes.json"
        obj = json.loads(track_file.read_text())
        obj["frames"] = [12]
        track_file.write_text(json.dumps(obj))
        with pytest.raises(ParseError):
            load_dataset(tmp_path)

    def test_missing_feature_file(self, tmp_path):
        write_dataset([_record()], tmp_path, "toy")
        (tmp_path / "features" / "v1.vsft").unlink()
        with pytest.raises(ParseError) as info:
            load_dataset(tmp_path)
        assert info.value.video_id == "v1"

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"videos": []}')
        with pytest.raises(ParseError):
            load_dataset(tmp_path)


class TestSubsample:
    def test_thirty_to_two(self):
        n = 60
        record = VideoRecord(
            "v",
            30.0,
            np.arange(n, dtype=np.float64).reshape(n, 1),
            [
                AnnotationTrack(KeyframeSet((14, 40), n)),
                AnnotationTrack(Keyshots(((10, 35), (46, 50)), n)),
                AnnotationTrack(Keyshots(((16, 20),), n)),
                AnnotationTrack(ImportanceCurve(np.linspace(0, 1, n))),
            ],
            segmentation=Segmentation((0, 20, 50), n),
        )
        small = subsample(record, 2.0)
        assert small.n_frames == 4
        assert small.fps_original == pytest.approx(2.0)
        np.testing.assert_array_equal(small.features[:, 0], [0, 15, 30, 45])
        assert small.annotations[0].data.frames == (1, 3)
        assert small.annotations[1].data.intervals == ((1, 2), (3, 3))
        assert small.annotations[2].data.intervals == ((1, 1),)
        np.testing.assert_allclose(small.annotations[3].data.values, np.linspace(0, 1, n)[::15])
        assert small.segmentation == Segmentation((0, 2), 4)

    def test_working_rate_is_identity(self):
        record = _record()
        assert subsample(record, 2.0) is record


class TestTargets:
    def test_consensus(self):
        tracks = [KeyframeSet((0, 1), 4), KeyframeSet((1, 2), 4), KeyframeSet((1, 3), 4)]
        assert consensus_keyframes(tracks).frames == (1,)
        assert consensus_keyframes([KeyframeSet((0,), 4), KeyframeSet((1,), 4)]).frames == (0, 1)

    def test_scores_take_priority(self, format_fixture):
        record = _record(
            n=6,
            tracks=[AnnotationTrack(format_fixture.keyframes), AnnotationTrack(format_fixture.scores)],
        )
        targets = training_targets(record, format_fixture.segmentation, 5 / 6)
        assert targets.curve == format_fixture.scores
        assert targets.keyframes == format_fixture.keyframes

    def test_scores_are_averaged(self):
        a = ImportanceCurve(np.array([0.0, 1.0, 0.5]))
        b = ImportanceCurve(np.array([1.0, 1.0, 0.5]))
        record = _record(n=3, tracks=[AnnotationTrack(a), AnnotationTrack(b)])
        targets = training_targets(record, Segmentation((0,), 3), 1.0)
        np.testing.assert_allclose(targets.curve.values, [0.5, 1.0, 0.5])

    def test_keyshots_give_middle_frames(self):
        record = _record(n=8, tracks=[AnnotationTrack(Keyshots(((0, 2), (5, 6)), 8))])
        targets = training_targets(record, Segmentation((0, 3, 5), 8))
        assert targets.keyframes.frames == (1, 6)
        np.testing.assert_array_equal(targets.curve.values, [1, 1, 1, 0, 0, 1, 1, 0])

    def test_keyframes_only(self, format_fixture):
        record = _record(n=6, tracks=[AnnotationTrack(format_fixture.keyframes)])
        targets = training_targets(record, format_fixture.segmentation, 5 / 6)
        assert targets.keyframes == format_fixture.keyframes
        np.testing.assert_array_equal(targets.curve.values, [1, 1, 0, 0, 1, 1])

    def test_no_tracks(self):
        with pytest.raises(ConfigurationError):
            training_targets(_record(), Segmentation((0,), 12))

    def test_references(self, format_fixture):
        record = _record(n=6, tracks=[AnnotationTrack(format_fixture.scores), AnnotationTrack(format_fixture.keyshots)])
        refs = reference_keyshots(record, format_fixture.segmentation, 5 / 6)
        assert refs == [format_fixture.keyshots, format_fixture.keyshots]

    def test_keyframe_only_has_no_references(self, format_fixture):
        record = _record(n=6, tracks=[AnnotationTrack(format_fixture.keyframes)])
        with pytest.raises(ConfigurationError):
            reference_keyshots(record, format_fixture.segmentation)


class TestConvert:
    def test_keyframes_to_keyshots(self, format_fixture):
        out = convert_track(AnnotationTrack(format_fixture.keyframes, "u"), "keyshots", format_fixture.segmentation, 5)
        assert out.data == format_fixture.keyshots
        assert out.annotator == "u"

    def test_scores_to_keyframes(self, format_fixture):
        out = convert_track(AnnotationTrack(format_fixture.scores), AnnotationFormat.KEYFRAMES, format_fixture.segmentation, 5)
        assert out.data == format_fixture.keyframes

    def test_same_format(self, format_fixture):
        with pytest.raises(UsageError):
            convert_track(AnnotationTrack(format_fixture.scores), "scores", format_fixture.segmentation, 5)


class TestSummaries:
    def test_write_and_read(self, tmp_path):
        summary = Summary("v2", Keyshots(((1, 2),), 6), 3, KeyframeSet((1,), 6))
        write_summary(tmp_path / "v2.json", summary)
        write_summary(tmp_path / "v1.json", Summary("v1", Keyshots((), 4), 0))
        loaded = read_summaries(tmp_path)
        assert [s.video_id for s in loaded] == ["v1", "v2"]
        assert loaded[1] == summary

    def test_over_budget_file(self, tmp_path):
        (tmp_path / "bad.json").write_text(
            json.dumps({"video_id": "v", "n_frames": 6, "budget_frames": 1, "keyshots": [[0, 3]]})
        )
        with pytest.raises(ParseError):
            read_summaries(tmp_path)


class TestDataService:
    def test_cache_and_relative_paths(self, tmp_path):
        write_dataset([_record()], tmp_path / "toy", "toy")
        service = DataService(root=tmp_path)
        first = service.get_dataset("toy")
        assert service.get_dataset("toy") is first
        assert service.get_dataset("toy", force_reload=True) is not first

    def test_subsamples_on_load(self, tmp_path):
        write_dataset([_record(fps=4.0)], tmp_path / "toy", "toy")
        (record,) = DataService(root=tmp_path, target_fps=2.0).get_dataset("toy")
        assert record.n_frames == 6

    def test_datasets_keyed_by_name(self, tmp_path):
        write_dataset([_record()], tmp_path / "a", "alpha")
        write_dataset([_record()], tmp_path / "b", "beta")
        service = DataService(root=tmp_path)
        assert set(service.get_datasets(["a", "b"])) == {"alpha", "beta"}
        with pytest.raises(ConfigurationError):
            service.get_datasets(["a", "a"])
