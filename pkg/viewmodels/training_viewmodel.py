"""Training loops with early stopping on validation F-score.

One video per gradient step, visited in a seeded random order each
epoch.  After every epoch the validation videos are summarised and scored
against their references; training stops once that score has dropped
``patience_k`` epochs in a row, and the weights of the best epoch are
restored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from models import autodiff as ad
from models.annotations import ImportanceCurve, KeyframeSet, Keyshots, Segmentation, VideoRecord, budget_frames
from models.metrics import Aggregation, eval_multi_user
from models.networks import (
    DppLstmModel,
    DppLstmSingleModel,
    MlpFrameModel,
    MlpShotModel,
    ModelCheckpoint,
    ModelKind,
    NetworkConfig,
    SequenceModel,
    VsLstmModel,
    dpp_nll_graph,
    square_loss_graph,
)
from models.temporal import keyframes_to
from services.data_service import reference_keyshots, segmentation_for, training_targets
from utils import config
from utils.errors import ConfigurationError, InsufficientDataError, InvalidTargetError
from viewmodels.summary_viewmodel import (
    baseline_summarize,
    dpplstm_single_summarize,
    dpplstm_summarize,
    vslstm_summarize,
)

logger = logging.getLogger(__name__)

LossFn = Callable[[SequenceModel, "TrainingExample"], ad.Var]
SummarizeFn = Callable[..., object]


@dataclass
class TrainingExample:
    """One video prepared for training or validation.

    Attributes:
        video_id (str): Source video.
        features (np.ndarray): ``T x d`` features.
        segmentation (Segmentation): Shot boundaries used for summaries.
        curve (ImportanceCurve): Frame-level target.
        keyframes (KeyframeSet): Keyframe target for the likelihood stage.
        references (list[Keyshots]): Keyshot references for validation.
    """

    video_id: str
    features: np.ndarray
    segmentation: Segmentation
    curve: ImportanceCurve
    keyframes: KeyframeSet
    references: List[Keyshots]

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])


def build_examples(
    records: Sequence[VideoRecord],
    budget_fraction: float = config.BUDGET_FRACTION,
    require_references: bool = False,
) -> List[TrainingExample]:
    """Collapse each record's tracks into targets and references.

    Keyframe-only records get the keyshots their keyframes induce as
    reference unless ``require_references`` is set.

    Raises:
        ConfigurationError: If a record lacks what its role needs.
    """
    examples: List[TrainingExample] = []
    for record in records:
        seg = segmentation_for(record)
        targets = training_targets(record, seg, budget_fraction)
        try:
            refs = reference_keyshots(record, seg, budget_fraction)
        except ConfigurationError:
            if require_references:
                raise
            refs = [keyframes_to(targets.keyframes, seg, budget_frames(record.n_frames, budget_fraction))[0]]
        examples.append(TrainingExample(record.video_id, record.features, seg, targets.curve, targets.keyframes, refs))
    return examples


@dataclass
class EarlyStopping:
    """Track the best epoch and count consecutive strict decreases."""

    patience_k: int
    best_score: float = -math.inf
    best_epoch: int = 0
    best_params: Optional[ad.ParamSet] = None
    decreases: int = 0
    _last: Optional[float] = field(default=None, repr=False)

    def update(self, epoch: int, score: float, params: ad.ParamSet) -> bool:
        """Record an epoch; returns True when training should stop."""
        if score > self.best_score:
            self.best_score, self.best_epoch = score, epoch
            self.best_params = {name: value.copy() for name, value in params.items()}
        self.decreases = self.decreases + 1 if self._last is not None and score < self._last else 0
        self._last = score
        return self.decreases >= self.patience_k


@dataclass
class TrainReport:
    """Per-epoch history of one training stage.

    Attributes:
        kind (ModelKind): Trained model.
        stage (str): ``"square"`` or ``"likelihood"``.
        train_loss (list[float]): Mean training loss per epoch.
        val_f_score (list[float]): Mean validation F-score per epoch.
        stopped_epoch (int): Last epoch run (1-based).
        best_epoch (int): Epoch whose weights were kept.
        best_checkpoint (ModelCheckpoint): Those weights.
        pretrain (TrainReport, optional): The preceding stage, if any.
    """

    kind: ModelKind
    stage: str
    train_loss: List[float]
    val_f_score: List[float]
    stopped_epoch: int
    best_epoch: int
    best_checkpoint: ModelCheckpoint
    pretrain: Optional["TrainReport"] = None

    @property
    def best_f_score(self) -> float:
        return self.val_f_score[self.best_epoch - 1] if self.val_f_score else 0.0

    def stages(self) -> List["TrainReport"]:
        return (self.pretrain.stages() if self.pretrain else []) + [self]

    def history(self) -> pd.DataFrame:
        """One row per epoch across all stages."""
        frames = [
            pd.DataFrame(
                {
                    "stage": r.stage,
                    "epoch": np.arange(1, len(r.train_loss) + 1),
                    "train_loss": r.train_loss,
                    "val_f_score": r.val_f_score,
                }
            )
            for r in self.stages()
        ]
        return pd.concat(frames, ignore_index=True)


def validation_f_score(
    model: SequenceModel,
    val: Sequence[TrainingExample],
    summarize_fn: SummarizeFn,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> float:
    """Mean F-score over ``val``, reduced in input order."""
    scores = []
    for ex in val:
        summary = summarize_fn(model, ex.features, ex.segmentation, budget_fraction, ex.video_id)
        scores.append(eval_multi_user(summary.keyshots, ex.references, ex.n_frames, agg).f_score)
    return float(np.mean(scores)) if scores else 0.0


def _check_sets(data: Sequence[TrainingExample], val: Sequence[TrainingExample]) -> None:
    if not data:
        raise InsufficientDataError("no training videos")
    if not val:
        raise InsufficientDataError("no validation videos")


def _fit(
    model: SequenceModel,
    data: Sequence[TrainingExample],
    val: Sequence[TrainingExample],
    loss_fn: LossFn,
    summarize_fn: SummarizeFn,
    cfg: ad.SgdConfig,
    stage: str,
    lr_scale: float = 1.0,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> TrainReport:
    optimizer = ad.SgdOptimizer(cfg, lr_scale)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience_k)
    losses: List[float] = []
    val_scores: List[float] = []
    epoch = 0
    for epoch in range(1, cfg.epochs_max + 1):
        epoch_losses = []
        for i in rng.permutation(len(data)):
            loss = loss_fn(model, data[i])
            optimizer.step(model.params, ad.backprop(loss, model.params))
            epoch_losses.append(float(loss.value))
        losses.append(float(np.mean(epoch_losses)))
        val_scores.append(validation_f_score(model, val, summarize_fn, budget_fraction, agg))
        stop = stopper.update(epoch, val_scores[-1], model.params)
        logger.info(
            "%s/%s epoch %d: loss %.6f val F %.2f (decreases %d/%d)",
            model.kind.value,
            stage,
            epoch,
            losses[-1],
            val_scores[-1],
            stopper.decreases,
            cfg.patience_k,
        )
        if stop:
            break
    model.load_params(stopper.best_params)
    checkpoint = model.to_checkpoint({"stage": stage, "best_epoch": stopper.best_epoch, "val_f_score": stopper.best_score})
    return TrainReport(model.kind, stage, losses, val_scores, epoch, stopper.best_epoch, checkpoint)


def _square_loss(model: SequenceModel, ex: TrainingExample) -> ad.Var:
    return square_loss_graph(model, ex.features, ex.curve.values, ex.segmentation)


def _nll_loss(model: SequenceModel, ex: TrainingExample) -> ad.Var:
    return dpp_nll_graph(model, ex.features, ex.keyframes.frames)


def _network_config(data: Sequence[TrainingExample], net_cfg: Optional[NetworkConfig]) -> NetworkConfig:
    return net_cfg if net_cfg is not None else NetworkConfig(int(data[0].features.shape[1]))


def vslstm_train(
    data: Sequence[TrainingExample],
    val: Sequence[TrainingExample],
    cfg: ad.SgdConfig,
    net_cfg: Optional[NetworkConfig] = None,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> TrainReport:
    """Square loss on the importance curve."""
    _check_sets(data, val)
    model = VsLstmModel.initialize(_network_config(data, net_cfg), cfg.seed)
    return _fit(model, data, val, _square_loss, vslstm_summarize, cfg, "square", 1.0, budget_fraction, agg)


def dpplstm_train_stagewise(
    data: Sequence[TrainingExample],
    val: Sequence[TrainingExample],
    cfg: ad.SgdConfig,
    net_cfg: Optional[NetworkConfig] = None,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> TrainReport:
    """Square loss on ``f_I`` first, then the DPP likelihood on everything.

    The likelihood stage starts from the best square-loss weights and runs
    at ``cfg.stage2_lr_scale`` times the learning rate.

    Raises:
        InvalidTargetError: If any training video has no keyframes.
    """
    _check_sets(data, val)
    empty = [ex.video_id for ex in data if not len(ex.keyframes)]
    if empty:
        raise InvalidTargetError(f"videos without keyframe targets: {', '.join(empty)}")
    model = DppLstmModel.initialize(_network_config(data, net_cfg), cfg.seed)
    pretrain = _fit(model, data, val, _square_loss, vslstm_summarize, cfg, "square", 1.0, budget_fraction, agg)
    report = _fit(
        model, data, val, _nll_loss, dpplstm_summarize, cfg, "likelihood", cfg.stage2_lr_scale, budget_fraction, agg
    )
    report.pretrain = pretrain
    return report


def dpplstm_single_train(
    data: Sequence[TrainingExample],
    val: Sequence[TrainingExample],
    cfg: ad.SgdConfig,
    net_cfg: Optional[NetworkConfig] = None,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> TrainReport:
    """DPP likelihood only, with ``L = Phi Phi^T``."""
    _check_sets(data, val)
    empty = [ex.video_id for ex in data if not len(ex.keyframes)]
    if empty:
        raise InvalidTargetError(f"videos without keyframe targets: {', '.join(empty)}")
    model = DppLstmSingleModel.initialize(_network_config(data, net_cfg), cfg.seed)
    return _fit(model, data, val, _nll_loss, dpplstm_single_summarize, cfg, "likelihood", 1.0, budget_fraction, agg)


def baseline_train(
    kind: ModelKind,
    data: Sequence[TrainingExample],
    val: Sequence[TrainingExample],
    cfg: ad.SgdConfig,
    net_cfg: Optional[NetworkConfig] = None,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> TrainReport:
    """Square loss for MLP-Shot (segment-mean targets) or MLP-Frame."""
    _check_sets(data, val)
    model_type = {ModelKind.MLP_SHOT: MlpShotModel, ModelKind.MLP_FRAME: MlpFrameModel}.get(ModelKind(kind))
    if model_type is None:
        raise ConfigurationError(f"{kind} is not a baseline")
    model = model_type.initialize(_network_config(data, net_cfg), cfg.seed)
    return _fit(model, data, val, _square_loss, baseline_summarize, cfg, "square", 1.0, budget_fraction, agg)


def train_model(
    kind: ModelKind,
    data: Sequence[TrainingExample],
    val: Sequence[TrainingExample],
    cfg: ad.SgdConfig,
    net_cfg: Optional[NetworkConfig] = None,
    budget_fraction: float = config.BUDGET_FRACTION,
    agg: Aggregation = Aggregation.MEAN,
) -> TrainReport:
    """Dispatch to the training loop for ``kind``."""
    kind = ModelKind(kind)
    if kind is ModelKind.VSLSTM:
        return vslstm_train(data, val, cfg, net_cfg, budget_fraction, agg)
    if kind is ModelKind.DPPLSTM:
        return dpplstm_train_stagewise(data, val, cfg, net_cfg, budget_fraction, agg)
    if kind is ModelKind.DPPLSTM_SINGLE:
        return dpplstm_single_train(data, val, cfg, net_cfg, budget_fraction, agg)
    return baseline_train(kind, data, val, cfg, net_cfg, budget_fraction, agg)
