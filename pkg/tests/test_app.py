"""Command-line behaviour."""

import json

import pytest

import app
from models.annotations import AnnotationTrack, KeyframeSet
from services.data_service import read_track, write_track
from utils import config


def _synth(out, seed=3, videos=4, name="synthetic"):
    argv = ["synth", "--out", str(out), "--seed", str(seed), "--videos", str(videos), "--name", name]
    argv += ["--min-frames", "40", "--max-frames", "50", "--dim", "4", "--clusters", "3", "--teacher-hidden", "4"]
    return app.main(argv)


class TestConvert:
    def test_keyframes_to_keyshots(self, tmp_path):
        write_track(tmp_path / "kf.json", AnnotationTrack(KeyframeSet((1, 5), 6)))
        code = app.main(
            [
                "convert",
                "--input", str(tmp_path / "kf.json"),
                "--to", "keyshots",
                "--boundaries", "0,2,4",
                "--budget-frames", "5",
                "--output", str(tmp_path / "shots.json"),
                "--out", str(tmp_path / "run"),
            ]
        )
        assert code == 0
        assert read_track(tmp_path / "shots.json").data.intervals == ((0, 1), (4, 5))
        options = json.loads((tmp_path / "run" / "options.json").read_text())
        assert options["boundaries"] == [0, 2, 4]

    def test_same_format_is_an_error(self, tmp_path):
        write_track(tmp_path / "kf.json", AnnotationTrack(KeyframeSet((1,), 6)))
        code = app.main(
            ["convert", "--input", str(tmp_path / "kf.json"), "--to", "keyframes", "--boundaries", "0,3", "--out", str(tmp_path)]
        )
        assert code == 1

    def test_missing_segmentation(self, tmp_path):
        write_track(tmp_path / "kf.json", AnnotationTrack(KeyframeSet((1,), 6)))
        assert app.main(["convert", "--input", str(tmp_path / "kf.json"), "--to", "keyshots", "--out", str(tmp_path)]) == 1


class TestSynth:
    def test_deterministic(self, tmp_path):
        assert _synth(tmp_path / "a") == 0
        assert _synth(tmp_path / "b") == 0
        for rel in ("features/synthetic_000.vsft", "manifest.json", "teacher.vsck"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestParser:
    def test_train_repeats_default_to_config(self):
        args = app.build_parser().parse_args(["train", "--data", "d", "--out", "o"])
        assert args.runs == config.RUNS

    def test_runs_flag_overrides(self):
        assert app.build_parser().parse_args(["train", "--data", "d", "--out", "o", "--runs", "2"]).runs == 2


def test_bad_arguments_exit_with_two():
    with pytest.raises(SystemExit) as info:
        app.main(["train"])
    assert info.value.code == 2


def test_unreadable_dataset_exits_with_one(tmp_path):
    assert app.main(["adapt", "--source", str(tmp_path / "x"), "--target", str(tmp_path / "y"), "--out", str(tmp_path)]) == 1


@pytest.mark.slow
def test_train_summarize_eval(tmp_path):
    assert _synth(tmp_path / "alpha", seed=1, videos=8, name="alpha") == 0
    assert _synth(tmp_path / "beta", seed=2, videos=6, name="beta") == 0

    run = tmp_path / "run"
    code = app.main(
        [
            "train", "--data", str(tmp_path / "alpha"), "--data", str(tmp_path / "beta"),
            "--setting", "augmented", "--model", "vslstm", "--epochs", "2", "--patience", "1",
            "--hidden", "4", "--embed", "4", "--runs", "1", "--out", str(run),
        ]
    )
    assert code == 0
    for name in ("model.vsck", "split.json", "transform_beta.vstf", "report.txt", "per_video.jsonl", "history.html"):
        assert (run / name).exists(), name

    summaries = tmp_path / "summaries"
    assert app.main(
        ["summarize", "--checkpoint", str(run / "model.vsck"), "--data", str(tmp_path / "alpha"), "--out", str(summaries)]
    ) == 0
    assert len(list((summaries / "summaries").glob("*.json"))) == 8

    evaluation = tmp_path / "eval"
    assert app.main(
        ["eval", "--summaries", str(summaries / "summaries"), "--data", str(tmp_path / "alpha"), "--out", str(evaluation)]
    ) == 0
    assert (evaluation / "eval.txt").read_text().startswith("mean: ")
