"""Annotation formats, video records and summaries.

Frames are addressed with 0-based indices; intervals are inclusive
``(start, end)`` pairs.  The three ground-truth formats are keyframes,
interval keyshots and frame-level importance curves; every type
validates itself on construction so downstream code can trust it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ContractError, EmptyInputError, NumericError, ShapeError

Interval = Tuple[int, int]


class AnnotationFormat(str, Enum):
    """On-disk tag of an annotation track."""

    KEYFRAMES = "keyframes"
    KEYSHOTS = "keyshots"
    SCORES = "scores"


def validate_features(x: np.ndarray) -> np.ndarray:
    """Return ``x`` as a float64 ``T x d`` feature matrix.

    Raises:
        EmptyInputError: If the sequence has no frames.
        ShapeError: If ``x`` is not 2-D.
        NumericError: If any entry is not finite.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"features must be T x d, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyInputError("feature sequence has no frames")
    if not np.all(np.isfinite(arr)):
        raise NumericError("feature sequence contains non-finite values")
    return arr


def budget_frames(n_frames: int, fraction: float) -> int:
    """Frame budget ``floor(fraction * n_frames)``."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"budget fraction must lie in (0, 1], got {fraction}")
    # the epsilon absorbs products such as 0.15 * 60 = 8.999...
    return int(math.floor(fraction * n_frames + 1e-9))


@dataclass(frozen=True)
class Segmentation:
    """Partition of ``[0, n_frames)`` into contiguous intervals.

    Attributes:
        boundaries (tuple[int, ...]): Interval start indices, starting at 0.
        n_frames (int): Sequence length; the last interval ends at ``n_frames - 1``.
    """

    boundaries: Tuple[int, ...]
    n_frames: int

    def __post_init__(self) -> None:
        b = tuple(int(v) for v in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if self.n_frames < 1 or not b:
            raise ContractError("segmentation must cover at least one frame")
        if b[0] != 0:
            raise ContractError("segmentation must start at frame 0")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ContractError("segment boundaries must be strictly increasing")
        if b[-1] >= self.n_frames:
            raise ContractError("segment boundary beyond the last frame")

    @classmethod
    def single(cls, n_frames: int) -> "Segmentation":
        """One segment covering every frame."""
        return cls((0,), n_frames)

    @classmethod
    def from_intervals(cls, intervals: Sequence[Interval]) -> "Segmentation":
        """Build from contiguous inclusive intervals.

        Raises:
            ContractError: If ``intervals`` is empty or does not tile the frames.
        """
        if not intervals:
            raise ContractError("segmentation needs at least one interval")
        for (s1, e1), (s2, _) in zip(intervals, intervals[1:]):
            if s2 != e1 + 1:
                raise ContractError("intervals must tile the sequence")
        return cls(tuple(s for s, _ in intervals), intervals[-1][1] + 1)

    def __len__(self) -> int:
        return len(self.boundaries)

    def intervals(self) -> List[Interval]:
        """Inclusive ``(start, end)`` of every segment."""
        ends = [b - 1 for b in self.boundaries[1:]] + [self.n_frames - 1]
        return list(zip(self.boundaries, ends))

    def durations(self) -> np.ndarray:
        """Frame count of every segment."""
        return np.diff(np.asarray(self.boundaries + (self.n_frames,)))

    def labels(self) -> np.ndarray:
        """Segment index of every frame."""
        return np.repeat(np.arange(len(self.boundaries)), self.durations())

    def segment_means(self, values: np.ndarray) -> np.ndarray:
        """Mean of ``values`` (frames along axis 0) within every segment."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.n_frames:
            raise ShapeError(f"expected {self.n_frames} frames, got {values.shape[0]}")
        sums = np.add.reduceat(values, np.asarray(self.boundaries), axis=0)
        durations = self.durations()
        return sums / (durations if values.ndim == 1 else durations[:, None])


@dataclass(frozen=True)
class KeyframeSet:
    """Sorted distinct keyframe indices within ``[0, n_frames)``."""

    frames: Tuple[int, ...]
    n_frames: int

    def __post_init__(self) -> None:
        frames = tuple(sorted(int(f) for f in self.frames))
        object.__setattr__(self, "frames", frames)
        if len(set(frames)) != len(frames):
            raise ContractError("keyframes must be distinct")
        if frames and (frames[0] < 0 or frames[-1] >= self.n_frames):
            raise ContractError(f"keyframe outside [0, {self.n_frames})")

    @classmethod
    def from_indicator(cls, indicator: Iterable[float]) -> "KeyframeSet":
        """Frames whose indicator entry is positive."""
        ind = np.asarray(list(indicator))
        return cls(tuple(int(i) for i in np.flatnonzero(ind > 0)), len(ind))

    def __len__(self) -> int:
        return len(self.frames)

    def indicator(self) -> np.ndarray:
        """0/1 vector over all frames."""
        out = np.zeros(self.n_frames, dtype=np.int64)
        out[list(self.frames)] = 1
        return out


@dataclass(frozen=True)
class Keyshots:
    """Sorted, disjoint, non-empty inclusive intervals."""

    intervals: Tuple[Interval, ...]
    n_frames: int

    def __post_init__(self) -> None:
        shots = tuple(sorted((int(s), int(e)) for s, e in self.intervals))
        object.__setattr__(self, "intervals", shots)
        for s, e in shots:
            if s > e:
                raise ContractError(f"empty keyshot ({s}, {e})")
            if s < 0 or e >= self.n_frames:
                raise ContractError(f"keyshot ({s}, {e}) outside [0, {self.n_frames})")
        for (_, e1), (s2, _) in zip(shots, shots[1:]):
            if s2 <= e1:
                raise ContractError("keyshots overlap")

    @classmethod
    def from_indicator(cls, indicator: Iterable[float]) -> "Keyshots":
        """Maximal runs of positive entries, as inclusive intervals."""
        ind = np.asarray(list(indicator)) > 0
        shots: List[Interval] = []
        start: Optional[int] = None
        for t, on in enumerate(ind):
            if on and start is None:
                start = t
            elif not on and start is not None:
                shots.append((start, t - 1))
                start = None
        if start is not None:
            shots.append((start, len(ind) - 1))
        return cls(tuple(shots), len(ind))

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def duration(self) -> int:
        return sum(e - s + 1 for s, e in self.intervals)

    def indicator(self) -> np.ndarray:
        """0/1 vector marking the frames inside any keyshot."""
        out = np.zeros(self.n_frames, dtype=np.int64)
        for s, e in self.intervals:
            out[s : e + 1] = 1
        return out


@dataclass(frozen=True, eq=False)
class ImportanceCurve:
    """Frame-level importance scores in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeError("importance curve must be 1-D")
        if not np.all(np.isfinite(v)):
            raise NumericError("importance curve contains non-finite values")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ContractError("importance scores must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.n_frames

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ImportanceCurve) and np.array_equal(self.values, other.values)


AnnotationData = Union[KeyframeSet, Keyshots, ImportanceCurve]


@dataclass(frozen=True)
class AnnotationTrack:
    """One annotator's ground truth in one of the three formats."""

    data: AnnotationData
    annotator: Optional[str] = None

    @property
    def format(self) -> AnnotationFormat:
        if isinstance(self.data, KeyframeSet):
            return AnnotationFormat.KEYFRAMES
        if isinstance(self.data, Keyshots):
            return AnnotationFormat.KEYSHOTS
        return AnnotationFormat.SCORES

    @property
    def n_frames(self) -> int:
        return self.data.n_frames


@dataclass(eq=False)
class VideoRecord:
    """A video's feature sequence with its annotations.

    Attributes:
        video_id (str): Identifier unique within its dataset.
        fps_original (float): Frame rate of ``features``.
        features (np.ndarray): ``T x d`` frame features.
        annotations (list[AnnotationTrack]): Ground-truth tracks.
        source_dataset (str): Name of the dataset the video belongs to.
        segmentation (Segmentation, optional): Temporal segmentation, if known.
    """

    video_id: str
    fps_original: float
    features: np.ndarray
    annotations: List[AnnotationTrack] = field(default_factory=list)
    source_dataset: str = ""
    segmentation: Optional[Segmentation] = None

    def __post_init__(self) -> None:
        self.features = validate_features(self.features)
        self.validate()

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def validate(self) -> None:
        """Check that every track and the segmentation match ``n_frames``."""
        if self.fps_original <= 0:
            raise ContractError(f"video {self.video_id}: fps must be positive")
        for track in self.annotations:
            if track.n_frames != self.n_frames:
                raise ShapeError(
                    f"video {self.video_id}: {track.format.value} track covers "
                    f"{track.n_frames} frames, features have {self.n_frames}"
                )
        if self.segmentation is not None and self.segmentation.n_frames != self.n_frames:
            raise ShapeError(f"video {self.video_id}: segmentation length mismatch")

    def tracks(self, fmt: AnnotationFormat) -> List[AnnotationTrack]:
        return [t for t in self.annotations if t.format is fmt]


@dataclass(frozen=True)
class Summary:
    """A budgeted keyshot summary with optional keyframes.

    Raises:
        ContractError: If the keyshots exceed ``budget_frames``.
    """

    video_id: str
    keyshots: Keyshots
    budget_frames: int
    keyframes: Optional[KeyframeSet] = None

    def __post_init__(self) -> None:
        if self.keyshots.duration > self.budget_frames:
            raise ContractError(
                f"summary of {self.video_id} lasts {self.keyshots.duration} frames, "
                f"budget is {self.budget_frames}"
            )

    @property
    def n_frames(self) -> int:
        return self.keyshots.n_frames
