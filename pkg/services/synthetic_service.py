"""Teacher-student synthetic corpora.

Features are piecewise-constant cluster centroids plus Gaussian noise.  A
frozen, randomly initialised vsLSTM (the teacher) scores every video; the
rescaled scores are the importance curve and the keyshot and keyframe
tracks are derived from it with the budgeted conversions, so a trainable
model can be judged by how well it recovers the teacher.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import numpy as np

from models.annotations import AnnotationTrack, ImportanceCurve, VideoRecord, budget_frames
from models.networks import ModelCheckpoint, NetworkConfig, VsLstmModel, vslstm_predict
from models.temporal import kts_segment, scores_to
from services.checkpoint_service import save_checkpoint
from services.data_service import write_dataset
from services.run_service import PathLike
from utils import config
from utils.errors import ContractError

logger = logging.getLogger(__name__)

TEACHER_FILE = "teacher.vsck"


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of a synthetic corpus.

    Attributes:
        n_videos (int): Number of videos.
        min_frames (int): Shortest video.
        max_frames (int): Longest video.
        feature_dim (int): Feature dimension.
        n_clusters (int): Number of distinct centroids.
        teacher_hidden (int): Hidden size of the teacher's LSTM and MLP.
        noise_sigma (float): Standard deviation of the additive noise.
        seed (int): Seed of the single generator driving everything.
        min_segment (int): Shortest constant segment.
        max_segment (int): Longest constant segment.
        teacher_init_scale (float): Uniform init half-width of the teacher;
            larger than the trainable default so scores vary visibly.
        fps (float): Frame rate stamped on the records.
        budget_fraction (float): Budget used for the derived tracks.
        name (str): Dataset name.
    """

    n_videos: int = 50
    min_frames: int = 60
    max_frames: int = 200
    feature_dim: int = 16
    n_clusters: int = 8
    teacher_hidden: int = 16
    noise_sigma: float = 0.1
    seed: int = config.SEED
    min_segment: int = 5
    max_segment: int = 20
    teacher_init_scale: float = 0.5
    fps: float = config.TARGET_FPS
    budget_fraction: float = config.BUDGET_FRACTION
    name: str = "synthetic"

    def __post_init__(self) -> None:
        counts = (self.n_videos, self.min_frames, self.feature_dim, self.n_clusters, self.teacher_hidden, self.min_segment)
        if min(counts) < 1:
            raise ContractError("synthetic counts must be positive")
        if self.max_frames < self.min_frames or self.max_segment < self.min_segment:
            raise ContractError("synthetic ranges must be non-empty")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be non-negative")


@dataclass
class SyntheticCorpus:
    records: List[VideoRecord]
    teacher: ModelCheckpoint


def rescale(raw: np.ndarray) -> np.ndarray:
    """Min-max rescale to ``[0, 1]``; a flat curve maps to 0.5."""
    lo, hi = float(np.min(raw)), float(np.max(raw))
    if hi - lo <= 1e-12:
        return np.full(raw.shape, 0.5)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def _segment_labels(rng: np.random.Generator, n_frames: int, cfg: SyntheticConfig) -> np.ndarray:
    labels = np.empty(n_frames, dtype=np.int64)
    t = 0
    while t < n_frames:
        length = int(rng.integers(cfg.min_segment, cfg.max_segment + 1))
        labels[t : t + length] = rng.integers(cfg.n_clusters)
        t += length
    return labels


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticCorpus:
    """Generate a corpus; the result is a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    centroids = rng.normal(size=(cfg.n_clusters, cfg.feature_dim))
    teacher_cfg = NetworkConfig(
        cfg.feature_dim,
        hidden_size=cfg.teacher_hidden,
        mlp_hidden=cfg.teacher_hidden,
        init_scale=cfg.teacher_init_scale,
    )
    teacher = VsLstmModel.initialize(teacher_cfg, seed=int(rng.integers(2**31)))

    records: List[VideoRecord] = []
    for i in range(cfg.n_videos):
        n_frames = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
        labels = _segment_labels(rng, n_frames, cfg)
        x = centroids[labels] + cfg.noise_sigma * rng.normal(size=(n_frames, cfg.feature_dim))
        curve = ImportanceCurve(rescale(vslstm_predict(teacher, x).values))
        seg = kts_segment(x, config.KTS_TARGET_MEAN_LEN)
        shots, keyframes = scores_to(curve, seg, budget_frames(n_frames, cfg.budget_fraction))
        tracks = [AnnotationTrack(curve, "teacher"), AnnotationTrack(shots, "teacher"), AnnotationTrack(keyframes, "teacher")]
        records.append(VideoRecord(f"{cfg.name}_{i:03d}", cfg.fps, x, tracks, cfg.name, seg))
    logger.info("generated %d synthetic videos (seed %d)", len(records), cfg.seed)
    return SyntheticCorpus(records, teacher.to_checkpoint({"synthetic": asdict(cfg)}))


def write_corpus(corpus: SyntheticCorpus, directory: PathLike) -> Path:
    """Write the dataset and the teacher checkpoint; returns the manifest path."""
    root = Path(directory)
    manifest = write_dataset(corpus.records, root, corpus.records[0].source_dataset if corpus.records else "synthetic")
    save_checkpoint(root / TEACHER_FILE, corpus.teacher)
    return manifest
