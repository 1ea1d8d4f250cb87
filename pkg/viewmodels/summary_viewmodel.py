"""Turn model outputs into budgeted summaries.

Every function returns a :class:`Summary`, whose constructor refuses any
keyshot set longer than ``floor(budget_fraction * T)`` frames.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from models.annotations import ImportanceCurve, KeyframeSet, Segmentation, Summary, budget_frames
from models.dpp import DppKernel, map_greedy
from models.networks import (
    DppLstmModel,
    DppLstmSingleModel,
    MlpBaseline,
    MlpShotModel,
    SequenceModel,
    VsLstmModel,
    baseline_predict,
)
from models.temporal import expand_segment_scores, fill_budget, keyframes_to, scores_to
from utils import config
from utils.errors import ContractError, ShapeError

logger = logging.getLogger(__name__)


def _check_segmentation(x: np.ndarray, seg: Segmentation) -> None:
    if seg is None or len(seg) == 0:
        raise ContractError("summaries need a non-empty segmentation")
    if seg.n_frames != np.asarray(x).shape[0]:
        raise ShapeError(f"segmentation covers {seg.n_frames} frames, features have {np.asarray(x).shape[0]}")


def summary_from_scores(
    scores: ImportanceCurve, seg: Segmentation, budget_fraction: float, video_id: str = ""
) -> Summary:
    """Knapsack over segment mean scores, one keyframe per selected shot."""
    budget = budget_frames(seg.n_frames, budget_fraction)
    shots, keyframes = scores_to(scores, seg, budget)
    return Summary(video_id, shots, budget, keyframes)


def _summary_from_kernel(
    kernel: DppKernel, fill_scores: np.ndarray, seg: Segmentation, budget_fraction: float, video_id: str
) -> Summary:
    budget = budget_frames(seg.n_frames, budget_fraction)
    keyframes = KeyframeSet(tuple(map_greedy(kernel)), seg.n_frames)
    shots, _ = keyframes_to(keyframes, seg, budget)
    shots = fill_budget(shots, seg, fill_scores, budget)
    logger.debug("%s: MAP picked %d frames, %d shots after fill-in", video_id, len(keyframes), len(shots))
    return Summary(video_id, shots, budget, keyframes)


def vslstm_summarize(
    model: VsLstmModel,
    x: np.ndarray,
    seg: Segmentation,
    budget_fraction: float = config.BUDGET_FRACTION,
    video_id: str = "",
) -> Summary:
    """Keyshots by knapsack over mean ``f_I`` scores per segment."""
    _check_segmentation(x, seg)
    return summary_from_scores(ImportanceCurve(model.graph(x)["quality"].value), seg, budget_fraction, video_id)


def dpplstm_summarize(
    model: DppLstmModel,
    x: np.ndarray,
    seg: Segmentation,
    budget_fraction: float = config.BUDGET_FRACTION,
    video_id: str = "",
) -> Summary:
    """Greedy MAP keyframes, their shots, then fill-in by mean ``f_I`` score."""
    _check_segmentation(x, seg)
    nodes = model.graph(x)
    kernel = DppKernel(nodes["kernel"].value, model.config.jitter)
    return _summary_from_kernel(kernel, nodes["quality"].value, seg, budget_fraction, video_id)


def dpplstm_single_summarize(
    model: DppLstmSingleModel,
    x: np.ndarray,
    seg: Segmentation,
    budget_fraction: float = config.BUDGET_FRACTION,
    video_id: str = "",
) -> Summary:
    """As :func:`dpplstm_summarize`, filling in by the kernel diagonal."""
    _check_segmentation(x, seg)
    kernel = DppKernel(model.graph(x)["kernel"].value, model.config.jitter)
    return _summary_from_kernel(kernel, np.diag(kernel.l).copy(), seg, budget_fraction, video_id)


def baseline_summarize(
    model: MlpBaseline,
    x: np.ndarray,
    seg: Segmentation,
    budget_fraction: float = config.BUDGET_FRACTION,
    video_id: str = "",
) -> Summary:
    """Keyshots from MLP scores; shot scores are expanded to frames first."""
    _check_segmentation(x, seg)
    scores = baseline_predict(model, x, seg)
    if isinstance(model, MlpShotModel):
        scores = expand_segment_scores(seg, scores)
    return summary_from_scores(ImportanceCurve(scores), seg, budget_fraction, video_id)


def summarize(
    model: SequenceModel,
    x: np.ndarray,
    seg: Segmentation,
    budget_fraction: float = config.BUDGET_FRACTION,
    video_id: str = "",
) -> Summary:
    """Dispatch on the model type."""
    if isinstance(model, DppLstmModel):
        return dpplstm_summarize(model, x, seg, budget_fraction, video_id)
    if isinstance(model, VsLstmModel):
        return vslstm_summarize(model, x, seg, budget_fraction, video_id)
    if isinstance(model, DppLstmSingleModel):
        return dpplstm_single_summarize(model, x, seg, budget_fraction, video_id)
    if isinstance(model, MlpBaseline):
        return baseline_summarize(model, x, seg, budget_fraction, video_id)
    raise ContractError(f"cannot summarise with {type(model).__name__}")


def random_scores_summary(
    seg: Segmentation,
    budget_fraction: float = config.BUDGET_FRACTION,
    rng: Optional[np.random.Generator] = None,
    video_id: str = "",
) -> Summary:
    """Reference summary from uniform random frame scores."""
    rng = rng if rng is not None else np.random.default_rng(config.SEED)
    return summary_from_scores(ImportanceCurve(rng.uniform(size=seg.n_frames)), seg, budget_fraction, video_id)
