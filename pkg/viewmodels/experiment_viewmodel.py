"""ViewModel for supervised-setting experiments.

Builds canonical, augmented and transfer splits, optionally aligns the
feature statistics of auxiliary datasets, trains one model kind, and
scores its summaries on the held-out test videos.  The view layer only
sees :class:`ExperimentResult` and :class:`RepeatedResult`.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import autodiff as ad
from models.adapt import LinearTransform, apply_transform, fit_align
from models.annotations import VideoRecord
from models.metrics import Aggregation, EvalReport, eval_multi_user, mean_report, mean_std
from models.networks import ModelKind, NetworkConfig, SequenceModel, model_from_checkpoint
from services.data_service import DataService
from utils import config
from utils.errors import ConfigurationError, InsufficientDataError
from viewmodels.summary_viewmodel import random_scores_summary, summarize
from viewmodels.training_viewmodel import TrainingExample, TrainReport, build_examples, train_model

logger = logging.getLogger(__name__)


class Setting(str, Enum):
    CANONICAL = "canonical"
    AUGMENTED = "augmented"
    TRANSFER = "transfer"


class AlignAnchor(str, Enum):
    """``target``: each auxiliary dataset is mapped onto the target.
    ``pooled``: every dataset is mapped onto the pooled training statistics."""

    TARGET = "target"
    POOLED = "pooled"


@dataclass(frozen=True, order=True)
class VideoRef:
    dataset: str
    video_id: str


@dataclass(frozen=True)
class SplitSpec:
    """Train, validation and test assignment for one experiment.

    Raises:
        ConfigurationError: If test videos leak into training or
            validation, or the setting's dataset rules are broken.
    """

    setting: Setting
    target: str
    train: Tuple[VideoRef, ...]
    val: Tuple[VideoRef, ...]
    test: Tuple[VideoRef, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.train or not self.val or not self.test:
            raise ConfigurationError("train, validation and test sets must all be non-empty")
        leaked = set(self.test) & (set(self.train) | set(self.val))
        if leaked:
            raise ConfigurationError(f"{len(leaked)} test videos also used for training or validation")
        if set(self.train) & set(self.val):
            raise ConfigurationError("training and validation videos overlap")
        if any(ref.dataset != self.target for ref in self.test):
            raise ConfigurationError("test videos must come from the target dataset")
        fitting = self.train + self.val
        if Setting(self.setting) is Setting.CANONICAL and any(ref.dataset != self.target for ref in fitting):
            raise ConfigurationError("canonical splits draw only from the target dataset")
        if Setting(self.setting) is Setting.TRANSFER and any(ref.dataset == self.target for ref in fitting):
            raise ConfigurationError("transfer splits exclude the target dataset from training")

    def datasets(self) -> List[str]:
        return sorted({ref.dataset for ref in self.train + self.val + self.test})


def _take(n: int, fraction: float) -> int:
    return max(1, int(round(fraction * n)))


def make_split(
    datasets: Dict[str, Sequence[VideoRecord]],
    target: str,
    setting: Setting,
    seed: int = config.SEED,
    test_fraction: float = config.TEST_FRACTION,
    val_fraction: float = config.VAL_FRACTION,
) -> SplitSpec:
    """Seeded split following the supervised settings.

    The same ``test_fraction`` of the target is held out in every setting.
    Canonical trains on the rest of the target, augmented adds every other
    dataset, transfer uses the other datasets only.  ``val_fraction`` of
    the training pool is set aside for early stopping.
    """
    setting = Setting(setting)
    if target not in datasets:
        raise ConfigurationError(f"unknown target dataset {target!r}")
    rng = np.random.default_rng(seed)
    target_refs = [VideoRef(target, r.video_id) for r in datasets[target]]
    if len(target_refs) < 2 and setting is not Setting.TRANSFER:
        raise InsufficientDataError(f"target {target} needs at least 2 videos")
    order = rng.permutation(len(target_refs))
    keep = 0 if setting is Setting.TRANSFER else 1
    n_test = min(_take(len(target_refs), test_fraction), len(target_refs) - keep)
    test = [target_refs[i] for i in order[:n_test]]
    rest = [target_refs[i] for i in order[n_test:]]

    others = [VideoRef(name, r.video_id) for name in sorted(datasets) if name != target for r in datasets[name]]
    pool = {Setting.CANONICAL: rest, Setting.AUGMENTED: rest + others, Setting.TRANSFER: others}[setting]
    if len(pool) < 2:
        raise InsufficientDataError(f"{setting.value} split leaves {len(pool)} training videos")
    pool_order = rng.permutation(len(pool))
    n_val = min(_take(len(pool), val_fraction), len(pool) - 1)
    val = [pool[i] for i in pool_order[:n_val]]
    train = [pool[i] for i in pool_order[n_val:]]
    return SplitSpec(setting, target, tuple(train), tuple(val), tuple(test), seed)


@dataclass
class ExperimentConfig:
    """Everything one experiment needs besides the data.

    Attributes:
        kind (ModelKind): Model to train.
        sgd (SgdConfig): Optimiser and stopping settings; ``sgd.seed``
            seeds initialisation and shuffling.
        net (NetworkConfig, optional): Sizes; inferred from the features
            when omitted.
        budget_fraction (float): Summary budget.
        agg (Aggregation): Multi-reference aggregation.
        adapt (bool): Align auxiliary datasets before training.
        anchor (AlignAnchor): Alignment reference.
        ridge (float, optional): Alignment ridge; defaults per pair.
    """

    kind: ModelKind = ModelKind.VSLSTM
    sgd: ad.SgdConfig = field(default_factory=ad.SgdConfig)
    net: Optional[NetworkConfig] = None
    budget_fraction: float = config.BUDGET_FRACTION
    agg: Aggregation = Aggregation.MEAN
    adapt: bool = True
    anchor: AlignAnchor = AlignAnchor.TARGET
    ridge: Optional[float] = None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, sgd=dataclasses.replace(self.sgd, seed=seed))


@dataclass
class VideoResult:
    video_id: str
    n_frames: int
    summary_duration: int
    budget_frames: int
    report: EvalReport


@dataclass
class ExperimentResult:
    split: SplitSpec
    test_report: EvalReport
    per_video: List[VideoResult]
    train_report: TrainReport
    transforms: Dict[str, LinearTransform] = field(default_factory=dict)


@dataclass
class RepeatedResult:
    mean_f_score: float
    std_f_score: float
    runs: List[ExperimentResult]


def _records(datasets: Dict[str, Sequence[VideoRecord]], refs: Sequence[VideoRef]) -> List[VideoRecord]:
    index = {(name, r.video_id): r for name, records in datasets.items() for r in records}
    try:
        return [index[(ref.dataset, ref.video_id)] for ref in refs]
    except KeyError as exc:
        raise ConfigurationError(f"split refers to unknown video {exc.args[0]}") from None


def fit_transforms(
    datasets: Dict[str, Sequence[VideoRecord]],
    split: SplitSpec,
    anchor: AlignAnchor = AlignAnchor.TARGET,
    ridge: Optional[float] = None,
) -> Dict[str, LinearTransform]:
    """One alignment per dataset that needs moving.

    Target statistics come from the target videos that are not tested on;
    only features are used, never labels.
    """
    test = set(split.test)
    target_rows = [r.features for r in datasets[split.target] if VideoRef(split.target, r.video_id) not in test]
    if not target_rows:
        target_rows = [r.features for r in _records(datasets, split.test)]
    fitting = split.train + split.val
    sources = sorted({ref.dataset for ref in fitting} - {split.target})
    rows = {name: [r.features for r in _records(datasets, [f for f in fitting if f.dataset == name])] for name in sources}

    if AlignAnchor(anchor) is AlignAnchor.TARGET:
        anchor_x = np.vstack(target_rows)
        return {name: fit_align(np.vstack(rows[name]), anchor_x, ridge, (name, split.target)) for name in sources}
    pooled = np.vstack(target_rows + [x for name in sources for x in rows[name]])
    rows[split.target] = target_rows
    return {name: fit_align(np.vstack(rows[name]), pooled, ridge, (name, "pooled")) for name in sorted(rows)}


def _transformed(records: Sequence[VideoRecord], transforms: Dict[str, LinearTransform]) -> List[VideoRecord]:
    out = []
    for r in records:
        t = transforms.get(r.source_dataset)
        out.append(r if t is None else dataclasses.replace(r, features=apply_transform(t, r.features)))
    return out


def evaluate_model(
    model: SequenceModel,
    test: Sequence[TrainingExample],
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> Tuple[EvalReport, List[VideoResult]]:
    """Summarise every test video and score it against its references.

    Returns:
        tuple: The mean report and one :class:`VideoResult` per video.
    """
    per_video = []
    for ex in test:
        summary = summarize(model, ex.features, ex.segmentation, budget_fraction, ex.video_id)
        report = eval_multi_user(summary.keyshots, ex.references, ex.n_frames, agg)
        per_video.append(VideoResult(ex.video_id, ex.n_frames, summary.keyshots.duration, summary.budget_frames, report))
    return mean_report([v.report for v in per_video]), per_video


def random_baseline_report(
    test: Sequence[TrainingExample],
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
    seed: int = config.SEED,
) -> EvalReport:
    """Mean F of summaries drawn from uniform random frame scores."""
    rng = np.random.default_rng(seed)
    reports = [
        eval_multi_user(
            random_scores_summary(ex.segmentation, budget_fraction, rng, ex.video_id).keyshots,
            ex.references,
            ex.n_frames,
            agg,
        )
        for ex in test
    ]
    return mean_report(reports)


def run_experiment(
    split: SplitSpec, datasets: Dict[str, Sequence[VideoRecord]], cfg: ExperimentConfig
) -> ExperimentResult:
    """Train on ``split.train``, stop on ``split.val``, score ``split.test``.

    Raises:
        ConfigurationError: If a test video has no keyshot or score
            reference, or a training video has no annotation at all.
    """
    transforms: Dict[str, LinearTransform] = {}
    if cfg.adapt and Setting(split.setting) is not Setting.CANONICAL:
        transforms = fit_transforms(datasets, split, cfg.anchor, cfg.ridge)
    train = build_examples(_transformed(_records(datasets, split.train), transforms), cfg.budget_fraction)
    val = build_examples(_transformed(_records(datasets, split.val), transforms), cfg.budget_fraction)
    test = build_examples(
        _transformed(_records(datasets, split.test), transforms), cfg.budget_fraction, require_references=True
    )
    logger.info(
        "%s %s on %s: %d train / %d val / %d test videos",
        cfg.kind.value,
        Setting(split.setting).value,
        split.target,
        len(train),
        len(val),
        len(test),
    )
    report = train_model(cfg.kind, train, val, cfg.sgd, cfg.net, cfg.budget_fraction, cfg.agg)
    model = model_from_checkpoint(report.best_checkpoint)
    test_report, per_video = evaluate_model(model, test, cfg.budget_fraction, cfg.agg)
    logger.info("test F %.2f (best epoch %d)", test_report.f_score, report.best_epoch)
    return ExperimentResult(split, test_report, per_video, report, transforms)


def run_repeated(
    build_split: Callable[[int], SplitSpec],
    datasets: Dict[str, Sequence[VideoRecord]],
    cfg: ExperimentConfig,
    runs: int = config.RUNS,
) -> RepeatedResult:
    """Repeat with seeds ``seed, seed + 1, ...`` and report mean and std F."""
    if runs < 1:
        raise ConfigurationError("runs must be at least 1")
    results = []
    for r in range(runs):
        seed = cfg.sgd.seed + r
        results.append(run_experiment(build_split(seed), datasets, cfg.with_seed(seed)))
    mean, std = mean_std([res.test_report.f_score for res in results])
    logger.info("%d runs: F %.2f +- %.2f", runs, mean, std)
    return RepeatedResult(mean, std, results)


@dataclass
class ExperimentViewModel:
    """Coordinate dataset loading and experiments for the command line.

    Args:
        service (DataService): Service used to read datasets.
    """

    service: DataService
    _datasets: Dict[str, List[VideoRecord]] = field(default_factory=dict, init=False, repr=False)

    def load(self, paths: Sequence[Path]) -> Dict[str, List[VideoRecord]]:
        """Load datasets through the service and keep them by name."""
        self._datasets.update(self.service.get_datasets(paths))
        return self._datasets

    @property
    def datasets(self) -> Dict[str, List[VideoRecord]]:
        return self._datasets

    def split(self, target: str, setting: Setting, seed: int) -> SplitSpec:
        """Split the loaded datasets for ``target``."""
        return make_split(self._datasets, target, setting, seed)

    def run(self, target: str, setting: Setting, cfg: ExperimentConfig, runs: int = 1) -> RepeatedResult:
        """Repeat the experiment ``runs`` times with consecutive seeds."""
        return run_repeated(lambda s: self.split(target, setting, s), self._datasets, cfg, runs)
