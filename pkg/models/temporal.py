"""Temporal segmentation, annotation conversions and budgeted selection.

The change-point search follows the kernel temporal segmentation recipe:
a linear-kernel Gram matrix, within-segment scatters computed from
cumulative sums, and dynamic programming over the number of segments.
Conversions between keyframes, keyshots and importance curves all go
through :func:`knapsack_select` so every keyshot output honours its
frame budget.
"""

from __future__ import annotations

import logging
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.annotations import (
    ImportanceCurve,
    KeyframeSet,
    Keyshots,
    Segmentation,
    validate_features,
)
from utils.errors import ContractError, ShapeError

logger = logging.getLogger(__name__)

_BISECTION_STEPS = 200


def kernel_scatters(x: np.ndarray) -> np.ndarray:
    """Within-segment scatter for every interval of a sequence.

    ``scatters[i, j]`` is the scatter of frames ``i..j`` (inclusive) around
    their mean under the linear kernel ``K = X X^T``.  Entries with ``j < i``
    are zero.

    Args:
        x (np.ndarray): ``T x d`` features.

    Returns:
        np.ndarray: ``T x T`` upper-triangular scatter matrix.
    """
    x = validate_features(x)
    n = x.shape[0]
    gram = x @ x.T
    k1 = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    k2 = np.zeros((n + 1, n + 1))
    k2[1:, 1:] = np.cumsum(np.cumsum(gram, axis=0), axis=1)

    i = np.arange(n).reshape(-1, 1)
    j = np.arange(n).reshape(1, -1)
    length = np.maximum(j - i + 1, 1).astype(np.float64)
    block = k2[j + 1, j + 1] - k2[i, j + 1] - k2[j + 1, i] + k2[i, i]
    scatters = (k1[j + 1] - k1[i]) - block / length
    scatters[j < i] = 0.0

    # cumulative sums leave rounding residue on exactly-constant stretches
    tol = 1e-12 * max(1.0, float(k1[-1]))
    scatters[scatters < tol] = 0.0
    return scatters


def segmentation_costs(scatters: np.ndarray, max_segments: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dynamic programme over change points.

    Returns:
        tuple: ``(cost, previous)`` where ``cost[m - 1, l]`` is the minimal
        total scatter of the first ``l`` frames split into ``m`` segments and
        ``previous[m - 1, l]`` the start of the last of those segments.
    """
    n = scatters.shape[0]
    m_max = max(1, min(max_segments, n))
    cost = np.full((m_max, n + 1), np.inf)
    previous = np.zeros((m_max, n + 1), dtype=np.int64)
    cost[0, 1:] = scatters[0, :]
    for m in range(1, m_max):
        for length in range(m + 1, n + 1):
            starts = np.arange(m, length)
            candidates = cost[m - 1, starts] + scatters[starts, length - 1]
            best = int(np.argmin(candidates))
            cost[m, length] = candidates[best]
            previous[m, length] = starts[best]
    return cost, previous


def _backtrack(previous: np.ndarray, n_segments: int, n: int) -> Tuple[int, ...]:
    """Segment starts from the DP back-pointers."""
    starts = [0] * n_segments
    end = n
    for m in range(n_segments - 1, 0, -1):
        starts[m] = int(previous[m, end])
        end = starts[m]
    return tuple(starts)


def _segments_for_penalty(totals: np.ndarray, penalty: float) -> int:
    """Segment count minimising cost plus ``penalty`` per segment."""
    objective = totals + penalty * np.arange(1, totals.shape[0] + 1)
    finite = objective[np.isfinite(objective)]
    tol = 1e-12 * max(1.0, float(np.max(np.abs(finite))))
    # fewest segments among (near-)ties
    return int(np.flatnonzero(objective <= finite.min() + tol)[0]) + 1


def kts_segment(
    x: np.ndarray,
    target_mean_len: int,
    max_segments: Optional[int] = None,
    penalty: Optional[float] = None,
) -> Segmentation:
    """Kernel temporal segmentation with a calibrated segment-count penalty.

    Minimises ``sum of within-segment scatters + penalty * n_segments``.
    Without an explicit ``penalty`` the penalty is bisected until the mean
    segment length is within 25% of ``target_mean_len`` (or as close as the
    sequence allows).

    Args:
        x (np.ndarray): ``T x d`` features.
        target_mean_len (int): Desired mean segment length in frames.
        max_segments (int, optional): Upper bound on the number of segments.
            Defaults to ``ceil(2 T / target_mean_len)``.
        penalty (float, optional): Fixed penalty, skipping calibration.

    Returns:
        Segmentation: The optimal segmentation.
    """
    x = validate_features(x)
    if target_mean_len < 1:
        raise ContractError("target_mean_len must be at least 1")
    n = x.shape[0]
    if max_segments is None:
        max_segments = int(np.ceil(2.0 * n / target_mean_len))
    max_segments = max(1, min(int(max_segments), n))

    cost, previous = segmentation_costs(kernel_scatters(x), max_segments)
    totals = cost[:, n]

    if penalty is not None:
        n_segments = _segments_for_penalty(totals, penalty)
    else:
        n_segments = _calibrate(totals, n, target_mean_len)
    logger.debug("kts: %d frames -> %d segments", n, n_segments)
    return Segmentation(_backtrack(previous, n_segments, n), n)


def _calibrate(totals: np.ndarray, n: int, target_mean_len: int) -> int:
    """Bisect the penalty towards the target mean segment length."""
    lo, hi = 0.0, max(float(totals[0]), 0.0)
    best = _segments_for_penalty(totals, hi)
    best_gap = abs(n / best - target_mean_len)
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        m = _segments_for_penalty(totals, mid)
        mean_len = n / m
        gap = abs(mean_len - target_mean_len)
        if gap < best_gap:
            best, best_gap = m, gap
        if 0.75 * target_mean_len <= mean_len <= 1.25 * target_mean_len:
            return m
        if mean_len < target_mean_len:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return best


def knapsack_select(items: Sequence[Tuple[float, int]], budget: int) -> List[int]:
    """Exact 0/1 knapsack over integer durations.

    Maximises the total value subject to ``sum(duration) <= budget``.  Among
    equal-value selections the one with the smaller total duration wins,
    then the lexicographically smallest index set.

    Args:
        items (Sequence[tuple[float, int]]): ``(value >= 0, duration >= 1)`` pairs.
        budget (int): Capacity in frames.

    Returns:
        list[int]: Sorted indices of the selected items.
    """
    n = len(items)
    if budget <= 0 or n == 0:
        return []
    values = np.asarray([float(v) for v, _ in items])
    durations = np.asarray([int(d) for _, d in items], dtype=np.int64)
    if np.any(values < 0) or np.any(durations < 1):
        raise ContractError("knapsack items need value >= 0 and duration >= 1")
    tol = 1e-12 * max(1.0, float(values.sum()))

    def not_worse(v1, d1, v2, d2):
        return (v1 > v2 + tol) | ((np.abs(v1 - v2) <= tol) & (d1 <= d2))

    best_val = np.zeros((n + 1, budget + 1))
    best_dur = np.zeros((n + 1, budget + 1), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        d = durations[i]
        take_val = np.full(budget + 1, -np.inf)
        take_dur = np.zeros(budget + 1, dtype=np.int64)
        if d <= budget:
            take_val[d:] = values[i] + best_val[i + 1, : budget + 1 - d]
            take_dur[d:] = d + best_dur[i + 1, : budget + 1 - d]
        take = not_worse(take_val, take_dur, best_val[i + 1], best_dur[i + 1])
        best_val[i] = np.where(take, take_val, best_val[i + 1])
        best_dur[i] = np.where(take, take_dur, best_dur[i + 1])

    selected: List[int] = []
    capacity = budget
    for i in range(n):
        d = int(durations[i])
        if d > capacity:
            continue
        if not_worse(
            values[i] + best_val[i + 1, capacity - d],
            d + best_dur[i + 1, capacity - d],
            best_val[i + 1, capacity],
            best_dur[i + 1, capacity],
        ):
            selected.append(i)
            capacity -= d
    return selected


def select_intervals(
    intervals: Sequence[Tuple[int, int]], values: Sequence[float], budget: int, n_frames: int
) -> Keyshots:
    """Knapsack-select whole intervals by value under a frame budget."""
    items = [(float(v), e - s + 1) for (s, e), v in zip(intervals, values)]
    chosen = knapsack_select(items, budget)
    return Keyshots(tuple(intervals[i] for i in chosen), n_frames)


def keyframes_to(
    keyframes: KeyframeSet, seg: Segmentation, budget: int
) -> Tuple[Keyshots, ImportanceCurve]:
    """Keyframes to keyshots and a binary importance curve.

    Intervals that contain at least one keyframe are candidates, valued by
    keyframe count divided by duration and selected under the budget.
    """
    _check_lengths(keyframes.n_frames, seg)
    counts = np.bincount(seg.labels()[list(keyframes.frames)], minlength=len(seg)) if len(keyframes) else np.zeros(len(seg))
    intervals = seg.intervals()
    durations = seg.durations()
    candidates = [k for k in range(len(seg)) if counts[k] > 0]
    shots = select_intervals(
        [intervals[k] for k in candidates],
        [counts[k] / durations[k] for k in candidates],
        budget,
        seg.n_frames,
    )
    return shots, ImportanceCurve(shots.indicator().astype(np.float64))


def keyshots_to(shots: Keyshots, n_frames: int) -> Tuple[KeyframeSet, ImportanceCurve]:
    """Keyshots to their middle frames and a binary importance curve.

    The keyframe of shot ``(s, e)`` is ``ceil((s + e) / 2)``.
    """
    if shots.n_frames != n_frames:
        raise ShapeError(f"keyshots cover {shots.n_frames} frames, expected {n_frames}")
    middles = tuple((s + e + 1) // 2 for s, e in shots.intervals)
    return KeyframeSet(middles, n_frames), ImportanceCurve(shots.indicator().astype(np.float64))


def scores_to(
    scores: ImportanceCurve, seg: Segmentation, budget: int
) -> Tuple[Keyshots, KeyframeSet]:
    """Importance scores to keyshots and one keyframe per keyshot.

    Intervals are valued by their mean score; within each selected shot the
    highest-scoring (earliest on ties) frame becomes the keyframe.
    """
    _check_lengths(scores.n_frames, seg)
    values = scores.values
    shots = select_intervals(seg.intervals(), seg.segment_means(values), budget, seg.n_frames)
    frames = tuple(s + int(np.argmax(values[s : e + 1])) for s, e in shots.intervals)
    return shots, KeyframeSet(frames, seg.n_frames)


def fill_budget(
    shots: Keyshots, seg: Segmentation, frame_scores: np.ndarray, budget: int
) -> Keyshots:
    """Add whole segments, ranked by mean frame score, into unused budget.

    Segments overlapping ``shots`` are not candidates; the remaining budget
    is filled through :func:`knapsack_select`.
    """
    _check_lengths(shots.n_frames, seg)
    remaining = budget - shots.duration
    if remaining <= 0:
        return shots
    covered = shots.indicator()
    means = seg.segment_means(np.asarray(frame_scores, dtype=np.float64))
    free = [(k, iv) for k, iv in enumerate(seg.intervals()) if not covered[iv[0] : iv[1] + 1].any()]
    extra = select_intervals([iv for _, iv in free], [means[k] for k, _ in free], remaining, seg.n_frames)
    return Keyshots(shots.intervals + extra.intervals, seg.n_frames)


def expand_segment_scores(seg: Segmentation, segment_scores: np.ndarray) -> np.ndarray:
    """Broadcast one score per segment to every frame of the segment."""
    segment_scores = np.asarray(segment_scores, dtype=np.float64)
    if segment_scores.shape != (len(seg),):
        raise ShapeError(f"expected {len(seg)} segment scores, got {segment_scores.shape}")
    return segment_scores[seg.labels()]


def enumerate_segmentations(n_frames: int, max_segments: int):
    """Yield every segmentation of ``n_frames`` with at most ``max_segments`` parts."""
    for m in range(1, max_segments + 1):
        for cuts in combinations(range(1, n_frames), m - 1):
            yield Segmentation((0,) + cuts, n_frames)


def _check_lengths(n_frames: int, seg: Segmentation) -> None:
    if n_frames != seg.n_frames:
        raise ShapeError(f"annotation covers {n_frames} frames, segmentation {seg.n_frames}")
