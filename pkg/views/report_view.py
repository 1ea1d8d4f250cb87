"""Report rendering.

Presentation only: plain text for people, JSON lines and CSV for
machines, and a plotly line chart of the training history.  Nothing here
computes a score; everything arrives from the view-models.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from models.annotations import Summary
from models.metrics import EvalReport
from services.run_service import PathLike, atomic_write_text
from viewmodels.experiment_viewmodel import ExperimentResult, RepeatedResult, VideoResult
from viewmodels.training_viewmodel import TrainReport

logger = logging.getLogger(__name__)

FIGURE_DIV_ID = "training-curve"


def format_eval(report: EvalReport, label: str = "") -> str:
    """One line with P and R in percent and F."""
    head = f"{label}: " if label else ""
    return f"{head}P {100 * report.precision:6.2f}  R {100 * report.recall:6.2f}  F {report.f_score:6.2f}"


def per_video_frame(per_video: Sequence[VideoResult]) -> pd.DataFrame:
    """One row per test video."""
    rows = [
        {
            "video_id": v.video_id,
            "n_frames": v.n_frames,
            "summary_frames": v.summary_duration,
            "budget_frames": v.budget_frames,
            "precision": v.report.precision,
            "recall": v.report.recall,
            "f_score": v.report.f_score,
            "n_references": max(1, len(v.report.per_user)),
        }
        for v in per_video
    ]
    return pd.DataFrame(rows, columns=list(rows[0]) if rows else None)


def summaries_frame(summaries: Iterable[Summary]) -> pd.DataFrame:
    """One row per keyshot; keyframes are listed on the first row of each video."""
    rows = []
    for s in summaries:
        frames = list(s.keyframes.frames) if s.keyframes is not None else []
        for k, (start, end) in enumerate(s.keyshots.intervals):
            rows.append(
                {
                    "video_id": s.video_id,
                    "start": start,
                    "end": end,
                    "n_frames": s.n_frames,
                    "budget_frames": s.budget_frames,
                    "keyframes": frames if k == 0 else [],
                }
            )
    return pd.DataFrame(rows, columns=["video_id", "start", "end", "n_frames", "budget_frames", "keyframes"])


def experiment_text(result: ExperimentResult) -> str:
    """Plain-text report of one run."""
    split = result.split
    report = result.train_report
    lines = [
        f"setting   {split.setting.value} (target {split.target}, seed {split.seed})",
        f"videos    {len(split.train)} train / {len(split.val)} val / {len(split.test)} test",
        f"model     {report.kind.value}",
    ]
    for stage in report.stages():
        lines.append(
            f"stage     {stage.stage}: {stage.stopped_epoch} epochs, best epoch {stage.best_epoch} "
            f"(val F {stage.best_f_score:.2f})"
        )
    for name, t in sorted(result.transforms.items()):
        lines.append(f"aligned   {name} -> {t.fitted_on[-1]} (ridge {t.ridge:.3g})")
    lines.append(format_eval(result.test_report, "test"))
    for v in result.per_video:
        lines.append("  " + format_eval(v.report, f"{v.video_id:>16}"))
    return "\n".join(lines) + "\n"


def repeated_text(result: RepeatedResult) -> str:
    """Per-run F and the mean with its spread."""
    runs = [f"  run {k + 1}: F {r.test_report.f_score:6.2f}" for k, r in enumerate(result.runs)]
    return "\n".join(runs + [f"mean F {result.mean_f_score:.2f} +- {result.std_f_score:.2f}"]) + "\n"


def training_figure(report: TrainReport, title: Optional[str] = None) -> go.Figure:
    """Loss and validation F per epoch, one facet row each."""
    history = report.history()
    history["step"] = range(1, len(history) + 1)
    long = history.melt(
        id_vars=["step", "stage", "epoch"],
        value_vars=["train_loss", "val_f_score"],
        var_name="series",
        value_name="value",
    )
    fig = px.line(
        long,
        x="step",
        y="value",
        color="stage",
        facet_row="series",
        markers=True,
        title=title or f"{report.kind.value} training",
    )
    fig.update_yaxes(matches=None)
    fig.update_layout(xaxis_title="epoch (all stages)")
    return fig


def write_text(path: PathLike, text: str) -> Path:
    return atomic_write_text(path, text)


def write_jsonl(path: PathLike, frame: pd.DataFrame) -> Path:
    """Write a frame as JSON lines."""
    text = frame.to_json(orient="records", lines=True) if len(frame) else ""
    if text and not text.endswith("\n"):
        text += "\n"
    return atomic_write_text(path, text)


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    """Write a frame as CSV without the index."""
    return atomic_write_text(path, frame.to_csv(index=False))


def write_training_html(path: PathLike, report: TrainReport) -> Path:
    """Write the training figure as a standalone HTML page."""
    html = training_figure(report).to_html(include_plotlyjs="cdn", full_html=True, div_id=FIGURE_DIV_ID)
    return atomic_write_text(path, html)


def write_experiment(directory: PathLike, results: List[ExperimentResult], repeated: Optional[RepeatedResult] = None) -> List[Path]:
    """Write every report of an experiment into ``directory``."""
    root = Path(directory)
    written: List[Path] = []
    texts = [experiment_text(r) for r in results]
    if repeated is not None:
        texts.append(repeated_text(repeated))
    written.append(write_text(root / "report.txt", "\n".join(texts)))
    rows = []
    for k, r in enumerate(results):
        frame = per_video_frame(r.per_video)
        frame.insert(0, "run", k + 1)
        rows.append(frame)
    written.append(write_jsonl(root / "per_video.jsonl", pd.concat(rows, ignore_index=True) if rows else pd.DataFrame()))
    for k, r in enumerate(results):
        suffix = f"_run{k + 1}" if len(results) > 1 else ""
        written.append(write_csv(root / f"history{suffix}.csv", r.train_report.history()))
        written.append(write_training_html(root / f"history{suffix}.html", r.train_report))
    logger.info("wrote %d report files to %s", len(written), root)
    return written
