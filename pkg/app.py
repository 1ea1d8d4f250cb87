"""Application entry point.

This module wires the service, view-model and view layers into a
command line with six verbs:

* ``synth``     - generate a teacher-labelled synthetic corpus
* ``train``     - train and test one model kind under a supervised setting
* ``summarize`` - write budgeted summaries with a trained checkpoint
* ``eval``      - score summaries (or a checkpoint) against references
* ``convert``   - convert an annotation file between formats
* ``adapt``     - fit and store a feature alignment between two datasets

Every verb writes ``options.json`` next to its outputs.

Usage:
    $ python app.py synth --seed 7 --out data/synthetic
    $ python app.py train --data data/synthetic --model dpplstm --out runs/a
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from models import autodiff as ad
from models.adapt import apply_transform, fit_align
from models.annotations import AnnotationFormat, Segmentation, budget_frames
from models.metrics import Aggregation, eval_multi_user, mean_report
from models.networks import ModelKind, NetworkConfig, model_from_checkpoint
from models.temporal import kts_segment
from services.checkpoint_service import load_checkpoint, save_checkpoint
from services.data_service import (
    DataService,
    convert_track,
    read_features,
    read_summaries,
    read_track,
    read_transform,
    reference_keyshots,
    segmentation_for,
    write_summary,
    write_track,
    write_transform,
)
from services.run_service import RunService
from services.synthetic_service import SyntheticConfig, generate_synthetic, write_corpus
from utils import config
from utils.errors import SummarizationError, UsageError
from viewmodels.experiment_viewmodel import (
    AlignAnchor,
    ExperimentConfig,
    ExperimentViewModel,
    Setting,
    VideoResult,
)
from viewmodels.summary_viewmodel import summarize
from views import report_view

logger = logging.getLogger(__name__)


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _boundaries(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("boundaries must be comma-separated integers") from None


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-command per verb."""
    parser = argparse.ArgumentParser(prog="vsumm", description="Supervised video summarisation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory (default: a new run directory)")
    common.add_argument("--seed", type=int, default=config.SEED)

    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    synth.add_argument("--videos", type=int, default=50)
    synth.add_argument("--min-frames", type=int, default=60)
    synth.add_argument("--max-frames", type=int, default=200)
    synth.add_argument("--dim", type=int, default=16)
    synth.add_argument("--clusters", type=int, default=8)
    synth.add_argument("--teacher-hidden", type=int, default=16)
    synth.add_argument("--noise", type=float, default=0.1)
    synth.add_argument("--name", default="synthetic")
    synth.set_defaults(func=cmd_synth)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--budget", type=float, default=config.BUDGET_FRACTION)
    data.add_argument("--fps", type=float, default=config.TARGET_FPS)
    data.add_argument("--agg", choices=[a.value for a in Aggregation], default=Aggregation.MEAN.value)

    train = sub.add_parser("train", parents=[common, data], help="train and test a model")
    train.add_argument("--data", type=Path, action="append", required=True, help="dataset manifest (repeatable)")
    train.add_argument("--target", help="test dataset name (default: the first --data)")
    train.add_argument("--model", choices=[k.value for k in ModelKind], default=ModelKind.VSLSTM.value)
    train.add_argument("--setting", choices=[s.value for s in Setting], default=Setting.CANONICAL.value)
    train.add_argument("--adapt", type=_on_off, default=True, help="on|off")
    train.add_argument("--anchor", choices=[a.value for a in AlignAnchor], default=AlignAnchor.TARGET.value)
    train.add_argument("--runs", type=int, default=config.RUNS, help="seeded repeats; more than one adds the mean +- std report")
    train.add_argument("--epochs", type=int, default=config.EPOCHS_MAX)
    train.add_argument("--patience", type=int, default=config.PATIENCE_K)
    train.add_argument("--lr", type=float, default=config.LEARNING_RATE)
    train.add_argument("--momentum", type=float, default=config.MOMENTUM)
    train.add_argument("--hidden", type=int, default=config.HIDDEN_SIZE)
    train.add_argument("--embed", type=int, default=config.EMBED_DIM)
    train.set_defaults(func=cmd_train)

    summ = sub.add_parser("summarize", parents=[common, data], help="summarise videos with a checkpoint")
    summ.add_argument("--checkpoint", type=Path, required=True)
    summ.add_argument("--data", type=Path, required=True)
    summ.add_argument("--transform", type=Path)
    summ.set_defaults(func=cmd_summarize)

    ev = sub.add_parser("eval", parents=[common, data], help="score summaries against references")
    source = ev.add_mutually_exclusive_group(required=True)
    source.add_argument("--summaries", type=Path, help="directory written by summarize")
    source.add_argument("--checkpoint", type=Path)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--transform", type=Path)
    ev.set_defaults(func=cmd_eval)

    conv = sub.add_parser("convert", parents=[common], help="convert an annotation file")
    conv.add_argument("--input", type=Path, required=True)
    conv.add_argument("--to", choices=[f.value for f in AnnotationFormat], required=True)
    seg = conv.add_mutually_exclusive_group()
    seg.add_argument("--boundaries", type=_boundaries, help="0-based segment starts, e.g. 0,2,4")
    seg.add_argument("--features", type=Path, help="feature file to segment with KTS")
    conv.add_argument("--kts-mean-len", type=int, default=config.KTS_TARGET_MEAN_LEN)
    budget = conv.add_mutually_exclusive_group()
    budget.add_argument("--budget", type=float, default=config.BUDGET_FRACTION)
    budget.add_argument("--budget-frames", type=int)
    conv.add_argument("--output", type=Path, help="output file (default: <out>/converted.json)")
    conv.set_defaults(func=cmd_convert)

    adapt = sub.add_parser("adapt", parents=[common], help="fit a feature alignment")
    adapt.add_argument("--source", type=Path, required=True)
    adapt.add_argument("--target", type=Path, required=True)
    adapt.add_argument("--ridge", type=float)
    adapt.add_argument("--fps", type=float, default=config.TARGET_FPS)
    adapt.set_defaults(func=cmd_adapt)
    return parser


def _run_service(args: argparse.Namespace) -> RunService:
    if args.out is not None:
        return RunService(seed=args.seed, directory=args.out)
    return RunService(seed=args.seed)


def _options(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace) -> int:
    """Generate a synthetic corpus and its labelling checkpoint."""
    run = _run_service(args)
    cfg = SyntheticConfig(
        n_videos=args.videos,
        min_frames=args.min_frames,
        max_frames=args.max_frames,
        feature_dim=args.dim,
        n_clusters=args.clusters,
        teacher_hidden=args.teacher_hidden,
        noise_sigma=args.noise,
        seed=args.seed,
        name=args.name,
    )
    manifest = write_corpus(generate_synthetic(cfg), run.directory)
    run.record_options(_options(args))
    logger.info("corpus manifest %s", manifest)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train and test under one supervised setting."""
    run = _run_service(args)
    vm = ExperimentViewModel(DataService(target_fps=args.fps))
    datasets = vm.load(args.data)
    if not datasets:
        raise UsageError("no datasets loaded")
    target = args.target or next(iter(datasets))
    feature_dim = next(r.feature_dim for records in datasets.values() for r in records)
    cfg = ExperimentConfig(
        kind=ModelKind(args.model),
        sgd=ad.SgdConfig(
            learning_rate=args.lr,
            epochs_max=args.epochs,
            patience_k=args.patience,
            momentum=args.momentum,
            seed=args.seed,
        ),
        net=NetworkConfig(feature_dim, hidden_size=args.hidden, mlp_hidden=args.hidden, embed_dim=args.embed),
        budget_fraction=args.budget,
        agg=Aggregation(args.agg),
        adapt=args.adapt,
        anchor=AlignAnchor(args.anchor),
    )
    result = vm.run(target, Setting(args.setting), cfg, args.runs)

    for k, res in enumerate(result.runs):
        suffix = f"_run{k + 1}" if len(result.runs) > 1 else ""
        save_checkpoint(run.path(f"model{suffix}.vsck"), res.train_report.best_checkpoint)
        run.write_json(f"split{suffix}.json", dataclasses.asdict(res.split))
        for name, t in res.transforms.items():
            write_transform(run.path(f"transform{suffix}_{name}.vstf"), t)
    report_view.write_experiment(run.directory, result.runs, result if len(result.runs) > 1 else None)
    run.record_options(_options(args))
    sys.stdout.write(report_view.repeated_text(result))
    return 0


def _load_records(args: argparse.Namespace):
    records = DataService(target_fps=args.fps).get_dataset(args.data)
    if getattr(args, "transform", None) is not None:
        t = read_transform(args.transform)
        records = [dataclasses.replace(r, features=apply_transform(t, r.features)) for r in records]
    return records


def _summaries(model, records, budget_fraction: float):
    return [
        summarize(model, r.features, segmentation_for(r), budget_fraction, r.video_id)
        for r in records
    ]


def cmd_summarize(args: argparse.Namespace) -> int:
    """Summarise every video of a dataset with a checkpoint."""
    run = _run_service(args)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    summaries = _summaries(model, _load_records(args), args.budget)
    for s in summaries:
        write_summary(run.path("summaries", f"{s.video_id}.json"), s)
    report_view.write_jsonl(run.path("summaries.jsonl"), report_view.summaries_frame(summaries))
    run.record_options(_options(args))
    logger.info("wrote %d summaries", len(summaries))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Score summary files against a dataset's references."""
    run = _run_service(args)
    records = {r.video_id: r for r in _load_records(args)}
    if args.summaries is not None:
        summaries = read_summaries(args.summaries)
    else:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint))
        summaries = _summaries(model, records.values(), args.budget)
    per_video: List[VideoResult] = []
    for s in summaries:
        record = records.get(s.video_id)
        if record is None:
            raise UsageError(f"summary for unknown video {s.video_id}")
        refs = reference_keyshots(record, segmentation_for(record), args.budget)
        report = eval_multi_user(s.keyshots, refs, record.n_frames, Aggregation(args.agg))
        per_video.append(VideoResult(s.video_id, record.n_frames, s.keyshots.duration, s.budget_frames, report))
    overall = mean_report([v.report for v in per_video])
    lines = [report_view.format_eval(overall, "mean")] + [
        "  " + report_view.format_eval(v.report, v.video_id) for v in per_video
    ]
    text = "\n".join(lines) + "\n"
    frame = report_view.per_video_frame(per_video)
    report_view.write_text(run.path("eval.txt"), text)
    report_view.write_csv(run.path("eval.csv"), frame)
    report_view.write_jsonl(run.path("eval.jsonl"), frame)
    run.record_options(_options(args))
    sys.stdout.write(text)
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    """Convert one annotation file to another format."""
    run = _run_service(args)
    track = read_track(args.input)
    n = track.n_frames
    if args.boundaries is not None:
        seg = Segmentation(tuple(args.boundaries), n)
    elif args.features is not None:
        x = read_features(args.features)
        if x.shape[0] != n:
            raise UsageError(f"feature file has {x.shape[0]} frames, annotation has {n}")
        seg = kts_segment(x, args.kts_mean_len)
    elif track.format is AnnotationFormat.KEYSHOTS:
        seg = Segmentation.single(n)
    else:
        raise UsageError("--boundaries or --features is required for this conversion")
    budget = args.budget_frames if args.budget_frames is not None else budget_frames(n, args.budget)
    converted = convert_track(track, AnnotationFormat(args.to), seg, budget)
    output = args.output or run.path("converted.json")
    write_track(output, converted)
    run.record_options(_options(args))
    logger.info("converted %s -> %s into %s", track.format.value, args.to, output)
    return 0


def cmd_adapt(args: argparse.Namespace) -> int:
    """Fit an alignment from one dataset onto another."""
    run = _run_service(args)
    service = DataService(target_fps=args.fps)
    source = service.get_dataset(args.source)
    target = service.get_dataset(args.target)
    if not source or not target:
        raise UsageError("both datasets must contain videos")
    t = fit_align(
        np.vstack([r.features for r in source]),
        np.vstack([r.features for r in target]),
        args.ridge,
        (source[0].source_dataset, target[0].source_dataset),
    )
    write_transform(run.path("transform.vstf"), t)
    run.record_options(_options(args))
    logger.info("fitted %s -> %s alignment (ridge %.3g)", *t.fitted_on, t.ridge)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one command.

    Returns:
        int: 0 on success, 1 when the pipeline raised a known error.
        Usage errors from argparse exit with status 2.
    """
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    command: Callable[[argparse.Namespace], int] = args.func
    try:
        return command(args)
    except SummarizationError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
