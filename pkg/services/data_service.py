"""Service layer for datasets on disk.

A dataset is a directory holding ``manifest.json``, one binary feature
file per video and one JSON file per annotation track.  Feature files
(and persisted alignment transforms) share a small self-describing
layout::

    magic (4 bytes) | version (1 byte) | T (uint32 LE) | d (uint32 LE)
    T * d float64 LE values, row-major

Every parsed record is validated before it is handed on, so the rest of
the application never sees inconsistent lengths or ranges.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.adapt import LinearTransform
from models.annotations import (
    AnnotationFormat,
    AnnotationTrack,
    ImportanceCurve,
    KeyframeSet,
    Keyshots,
    Segmentation,
    Summary,
    VideoRecord,
    budget_frames,
)
from models.temporal import keyframes_to, keyshots_to, kts_segment, scores_to
from services.run_service import PathLike, atomic_write_bytes, atomic_write_text, dump_json
from utils import config
from utils.errors import (
    ConfigurationError,
    ContractError,
    ParseError,
    SummarizationError,
    UsageError,
    VersionError,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"VSFT"
TRANSFORM_MAGIC = b"VSTF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBII")

MANIFEST_NAME = "manifest.json"


# --------------------------------------------------------------------------
# Binary matrices
# --------------------------------------------------------------------------
def encode_matrix(m: np.ndarray, magic: bytes = FEATURE_MAGIC) -> bytes:
    """Header plus row-major little-endian float64 data."""
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ContractError(f"only 2-D matrices can be stored, got shape {m.shape}")
    return _HEADER.pack(magic, FORMAT_VERSION, m.shape[0], m.shape[1]) + m.tobytes()


def decode_matrix(data: bytes, magic: bytes = FEATURE_MAGIC, video_id: Optional[str] = None) -> np.ndarray:
    """Parse a matrix written by :func:`encode_matrix`.

    Raises:
        ParseError: On a wrong magic, a short header or truncated data;
            ``offset`` marks where the file stopped making sense.
        VersionError: On an unknown version byte.
    """
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", video_id, "header", len(data))
    found, version, rows, cols = _HEADER.unpack_from(data)
    if found != magic:
        raise ParseError(f"bad magic {found!r}, expected {magic!r}", video_id, "magic", 0)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported version {version}", video_id, "version", 4)
    expected = rows * cols * 8
    body = data[_HEADER.size :]
    if len(body) != expected:
        raise ParseError(
            f"expected {expected} data bytes, found {len(body)}",
            video_id,
            "data",
            _HEADER.size + min(len(body), expected),
        )
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_features(path: PathLike, x: np.ndarray) -> Path:
    """Store a ``T x d`` feature matrix as ``VSFT``."""
    return atomic_write_bytes(path, encode_matrix(x, FEATURE_MAGIC))


def read_features(path: PathLike, video_id: Optional[str] = None) -> np.ndarray:
    """Load a ``VSFT`` feature file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read feature file {path}: {exc}", video_id, "features") from exc
    return decode_matrix(data, FEATURE_MAGIC, video_id)


def write_transform(path: PathLike, t: LinearTransform) -> Path:
    """Store the matrix in binary form plus a JSON sidecar with provenance."""
    target = atomic_write_bytes(path, encode_matrix(t.matrix, TRANSFORM_MAGIC))
    atomic_write_text(Path(f"{target}.json"), dump_json({"fitted_on": list(t.fitted_on), "ridge": t.ridge}))
    return target


def read_transform(path: PathLike) -> LinearTransform:
    """Load a ``VSTF`` transform and its JSON sidecar.

    Raises:
        ParseError: If either file is unreadable or malformed.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read transform {path}: {exc}", field="transform") from exc
    matrix = decode_matrix(data, TRANSFORM_MAGIC)
    sidecar = Path(f"{path}.json")
    try:
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return LinearTransform(matrix, tuple(meta.get("fitted_on", ())), float(meta.get("ridge", 0.0)))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid transform sidecar: {exc.msg}", field="transform", offset=exc.pos) from exc
    except (AttributeError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed transform sidecar: {exc}", field="transform") from exc


# --------------------------------------------------------------------------
# Annotation files
# --------------------------------------------------------------------------
def track_to_dict(track: AnnotationTrack) -> Dict[str, Any]:
    """JSON-ready form of one annotation track."""
    data = track.data
    out: Dict[str, Any] = {"format": track.format.value, "n_frames": track.n_frames}
    if track.annotator is not None:
        out["annotator"] = track.annotator
    if isinstance(data, KeyframeSet):
        out["frames"] = list(data.frames)
    elif isinstance(data, Keyshots):
        out["intervals"] = [[s, e] for s, e in data.intervals]
    else:
        out["values"] = [float(v) for v in data.values]
    return out


def track_from_dict(obj: Dict[str, Any], video_id: Optional[str] = None) -> AnnotationTrack:
    """Build a validated track, turning every failure into :class:`ParseError`."""
    fmt_name = obj.get("format")
    try:
        fmt = AnnotationFormat(fmt_name)
    except ValueError:
        raise ParseError(f"unknown annotation format {fmt_name!r}", video_id, "format") from None
    if "n_frames" not in obj:
        raise ParseError("missing frame count", video_id, "n_frames")
    n = int(obj["n_frames"])
    key = {"keyframes": "frames", "keyshots": "intervals", "scores": "values"}[fmt.value]
    if key not in obj:
        raise ParseError(f"missing {key}", video_id, key)
    try:
        if fmt is AnnotationFormat.KEYFRAMES:
            data: Any = KeyframeSet(tuple(obj[key]), n)
        elif fmt is AnnotationFormat.KEYSHOTS:
            data = Keyshots(tuple((int(s), int(e)) for s, e in obj[key]), n)
        else:
            data = ImportanceCurve(np.asarray(obj[key], dtype=np.float64))
            if data.n_frames != n:
                raise ContractError(f"curve has {data.n_frames} values, n_frames is {n}")
    except SummarizationError as exc:
        raise ParseError(str(exc), video_id, key) from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed {key}: {exc}", video_id, key) from exc
    return AnnotationTrack(data, obj.get("annotator"))


def write_track(path: PathLike, track: AnnotationTrack) -> Path:
    """Write one annotation track as JSON."""
    return atomic_write_text(path, dump_json(track_to_dict(track)))


def read_track(path: PathLike, video_id: Optional[str] = None) -> AnnotationTrack:
    """Read one annotation track.

    Args:
        path (PathLike): JSON file written by :func:`write_track`.
        video_id (str, optional): Reported in parse errors.

    Returns:
        AnnotationTrack: The parsed track.

    Raises:
        ParseError: If the file is unreadable or malformed.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read annotation file {path}: {exc}", video_id, "annotations") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", video_id, "annotations", exc.pos) from exc
    return track_from_dict(obj, video_id)


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------
@dataclass
class VideoEntry:
    video_id: str
    fps: float
    features: str
    annotations: List[str] = field(default_factory=list)
    segmentation: Optional[List[int]] = None


@dataclass
class DatasetManifest:
    """Index of one dataset directory; paths are relative to it."""

    name: str
    feature_dim: int
    videos: List[VideoEntry] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        videos = []
        for v in self.videos:
            entry: Dict[str, Any] = {
                "id": v.video_id,
                "fps": v.fps,
                "features": v.features,
                "annotations": list(v.annotations),
            }
            if v.segmentation is not None:
                entry["segmentation"] = list(v.segmentation)
            videos.append(entry)
        return {"name": self.name, "feature_dim": self.feature_dim, "videos": videos}

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "DatasetManifest":
        try:
            videos = [
                VideoEntry(
                    str(v["id"]),
                    float(v["fps"]),
                    str(v["features"]),
                    [str(a) for a in v.get("annotations", [])],
                    v.get("segmentation"),
                )
                for v in obj.get("videos", [])
            ]
            return cls(str(obj["name"]), int(obj["feature_dim"]), videos)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed manifest: {exc}", field="manifest") from exc


def read_manifest(path: PathLike) -> DatasetManifest:
    """Parse ``manifest.json``."""
    try:
        return DatasetManifest.from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}", field="manifest") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid manifest JSON: {exc.msg}", field="manifest", offset=exc.pos) from exc


def _resolve_manifest(path: PathLike) -> Path:
    p = Path(path)
    return p / MANIFEST_NAME if p.is_dir() else p


def load_dataset(manifest_path: PathLike) -> List[VideoRecord]:
    """Read and validate every video listed in a manifest.

    Raises:
        ParseError: Naming the video and field for any missing file,
            length mismatch or out-of-range annotation.
    """
    manifest_file = _resolve_manifest(manifest_path)
    manifest = read_manifest(manifest_file)
    base = manifest_file.parent
    records: List[VideoRecord] = []
    for entry in manifest.videos:
        x = read_features(base / entry.features, entry.video_id)
        if x.shape[1] != manifest.feature_dim:
            raise ParseError(
                f"feature dim {x.shape[1]} differs from manifest {manifest.feature_dim}",
                entry.video_id,
                "features",
            )
        tracks = [read_track(base / a, entry.video_id) for a in entry.annotations]
        try:
            seg = Segmentation(tuple(entry.segmentation), x.shape[0]) if entry.segmentation else None
            record = VideoRecord(entry.video_id, entry.fps, x, tracks, manifest.name, seg)
        except SummarizationError as exc:
            raise ParseError(str(exc), entry.video_id, "annotations") from exc
        records.append(record)
    logger.info("loaded %d videos from %s", len(records), manifest_file)
    return records


def write_dataset(records: Sequence[VideoRecord], directory: PathLike, name: str) -> Path:
    """Write features, tracks and a manifest; returns the manifest path."""
    root = Path(directory)
    dims = {r.feature_dim for r in records}
    if len(dims) > 1:
        raise ContractError(f"records disagree on feature dim: {sorted(dims)}")
    manifest = DatasetManifest(name, dims.pop() if dims else 0)
    for record in records:
        feature_rel = f"features/{record.video_id}.vsft"
        write_features(root / feature_rel, record.features)
        track_rels = []
        for k, track in enumerate(record.annotations):
            rel = f"annotations/{record.video_id}.{k}.{track.format.value}.json"
            write_track(root / rel, track)
            track_rels.append(rel)
        seg = list(record.segmentation.boundaries) if record.segmentation is not None else None
        manifest.videos.append(VideoEntry(record.video_id, record.fps_original, feature_rel, track_rels, seg))
    return atomic_write_text(root / MANIFEST_NAME, dump_json(manifest.to_dict()))


# --------------------------------------------------------------------------
# Frame-rate subsampling
# --------------------------------------------------------------------------
def _subsample_shots(shots: Keyshots, stride: int, n_kept: int) -> Keyshots:
    mapped: List[Tuple[int, int]] = []
    for s, e in shots.intervals:
        start, end = -(-s // stride), e // stride
        if start > end:
            start = end = min(int(math.floor(((s + e) // 2) / stride + 0.5)), n_kept - 1)
        if mapped and start <= mapped[-1][1]:
            mapped[-1] = (mapped[-1][0], max(mapped[-1][1], end))
        else:
            mapped.append((start, end))
    return Keyshots(tuple(mapped), n_kept)


def _subsample_track(track: AnnotationTrack, stride: int, n_kept: int) -> AnnotationTrack:
    data = track.data
    if isinstance(data, KeyframeSet):
        snapped = {min(int(math.floor(f / stride + 0.5)), n_kept - 1) for f in data.frames}
        return AnnotationTrack(KeyframeSet(tuple(snapped), n_kept), track.annotator)
    if isinstance(data, Keyshots):
        return AnnotationTrack(_subsample_shots(data, stride, n_kept), track.annotator)
    return AnnotationTrack(ImportanceCurve(data.values[::stride].copy()), track.annotator)


def subsample(record: VideoRecord, target_fps: float = config.TARGET_FPS) -> VideoRecord:
    """Keep every ``floor(fps / target_fps)``-th frame starting at frame 0.

    Keyframes snap to the nearest kept frame, keyshots are re-expressed on
    the kept grid and curves are sampled on it.

    Raises:
        ContractError: If ``target_fps`` is not positive.
    """
    if target_fps <= 0:
        raise ContractError("target fps must be positive")
    stride = max(1, int(math.floor(record.fps_original / target_fps + 1e-9)))
    if stride == 1:
        return record
    x = record.features[::stride]
    n_kept = x.shape[0]
    tracks = [_subsample_track(t, stride, n_kept) for t in record.annotations]
    seg = None
    if record.segmentation is not None:
        starts = {-(-b // stride) for b in record.segmentation.boundaries}
        seg = Segmentation(tuple(sorted(b for b in starts if b < n_kept)), n_kept)
    return VideoRecord(record.video_id, record.fps_original / stride, x, tracks, record.source_dataset, seg)


# --------------------------------------------------------------------------
# Targets and references
# --------------------------------------------------------------------------
def consensus_keyframes(tracks: Sequence[KeyframeSet]) -> KeyframeSet:
    """Frames chosen by at least half of the annotators."""
    if not tracks:
        raise ContractError("consensus needs at least one keyframe track")
    votes = np.sum([t.indicator() for t in tracks], axis=0)
    return KeyframeSet(tuple(int(i) for i in np.flatnonzero(2 * votes >= len(tracks))), tracks[0].n_frames)


def mean_curve(curves: Sequence[ImportanceCurve]) -> ImportanceCurve:
    """Frame-wise mean of several importance curves."""
    if not curves:
        raise ContractError("mean curve needs at least one track")
    return ImportanceCurve(np.mean([c.values for c in curves], axis=0))


def segmentation_for(record: VideoRecord, target_mean_len: int = config.KTS_TARGET_MEAN_LEN) -> Segmentation:
    """The stored segmentation, or KTS on the features when there is none."""
    if record.segmentation is not None:
        return record.segmentation
    return kts_segment(record.features, target_mean_len)


@dataclass(frozen=True)
class TrainingTargets:
    curve: ImportanceCurve
    keyframes: KeyframeSet


def training_targets(
    record: VideoRecord, seg: Segmentation, budget_fraction: float = config.BUDGET_FRACTION
) -> TrainingTargets:
    """Collapse every track into one curve and one keyframe set.

    Score tracks are averaged and their keyframes derived by the scores
    conversion.  Without scores, keyshot tracks supply middle keyframes
    and a binary curve; keyframe-only videos use the consensus keyframes
    and a binary curve over the keyshots they induce.

    Raises:
        ConfigurationError: If the record has no annotation track.
    """
    budget = budget_frames(record.n_frames, budget_fraction)
    scores = [t.data for t in record.tracks(AnnotationFormat.SCORES)]
    if scores:
        curve = mean_curve(scores)
        return TrainingTargets(curve, scores_to(curve, seg, budget)[1])
    shots = [t.data for t in record.tracks(AnnotationFormat.KEYSHOTS)]
    if shots:
        converted = [keyshots_to(s, record.n_frames) for s in shots]
        keyframes = consensus_keyframes([k for k, _ in converted])
        return TrainingTargets(mean_curve([c for _, c in converted]), keyframes)
    frames = [t.data for t in record.tracks(AnnotationFormat.KEYFRAMES)]
    if frames:
        keyframes = consensus_keyframes(frames)
        return TrainingTargets(keyframes_to(keyframes, seg, budget)[1], keyframes)
    raise ConfigurationError(f"video {record.video_id} has no annotation tracks")


def reference_keyshots(
    record: VideoRecord, seg: Segmentation, budget_fraction: float = config.BUDGET_FRACTION
) -> List[Keyshots]:
    """Every keyshot track plus every score track converted at the budget.

    Raises:
        ConfigurationError: If the record has neither.
    """
    refs = [t.data for t in record.tracks(AnnotationFormat.KEYSHOTS)]
    budget = budget_frames(record.n_frames, budget_fraction)
    refs.extend(scores_to(t.data, seg, budget)[0] for t in record.tracks(AnnotationFormat.SCORES))
    if not refs:
        raise ConfigurationError(f"video {record.video_id} has no keyshot or score references for testing")
    return refs


def convert_track(
    track: AnnotationTrack, to: AnnotationFormat, seg: Segmentation, budget: int
) -> AnnotationTrack:
    """Convert one track into another format with the budgeted conversions.

    Raises:
        UsageError: If ``to`` is the track's own format.
    """
    to = AnnotationFormat(to)
    if to is track.format:
        raise UsageError(f"track is already in {to.value} format")
    data = track.data
    if isinstance(data, KeyframeSet):
        shots, curve = keyframes_to(data, seg, budget)
        out: Any = shots if to is AnnotationFormat.KEYSHOTS else curve
    elif isinstance(data, Keyshots):
        keyframes, curve = keyshots_to(data, seg.n_frames)
        out = keyframes if to is AnnotationFormat.KEYFRAMES else curve
    else:
        shots, keyframes = scores_to(data, seg, budget)
        out = shots if to is AnnotationFormat.KEYSHOTS else keyframes
    return AnnotationTrack(out, track.annotator)


# --------------------------------------------------------------------------
# Summaries
# --------------------------------------------------------------------------
def summary_to_dict(summary: Summary) -> Dict[str, Any]:
    """JSON-ready form of a summary."""
    return {
        "video_id": summary.video_id,
        "n_frames": summary.n_frames,
        "budget_frames": summary.budget_frames,
        "keyshots": [[s, e] for s, e in summary.keyshots.intervals],
        "keyframes": list(summary.keyframes.frames) if summary.keyframes is not None else None,
    }


def summary_from_dict(obj: Dict[str, Any]) -> Summary:
    """Inverse of :func:`summary_to_dict`.

    Raises:
        ParseError: If fields are missing or break a summary invariant.
    """
    video_id = obj.get("video_id")
    try:
        n = int(obj["n_frames"])
        shots = Keyshots(tuple((int(s), int(e)) for s, e in obj["keyshots"]), n)
        frames = obj.get("keyframes")
        keyframes = KeyframeSet(tuple(frames), n) if frames is not None else None
        return Summary(str(video_id), shots, int(obj["budget_frames"]), keyframes)
    except SummarizationError as exc:
        raise ParseError(str(exc), video_id, "summary") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed summary: {exc}", video_id, "summary") from exc


def write_summary(path: PathLike, summary: Summary) -> Path:
    """Write one summary as JSON."""
    return atomic_write_text(path, dump_json(summary_to_dict(summary)))


def read_summaries(directory: PathLike) -> List[Summary]:
    """Every ``*.json`` summary in ``directory``, sorted by file name."""
    out = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            out.append(summary_from_dict(json.loads(path.read_text())))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc.msg}", field="summary", offset=exc.pos) from exc
    return out


# --------------------------------------------------------------------------
# Facade
# --------------------------------------------------------------------------
@dataclass
class DataService:
    """Facade over dataset directories with a per-manifest cache.

    Args:
        root (Path): Directory that relative dataset paths resolve against.
        target_fps (float): Working frame rate applied on load.
    """

    root: Path = field(default_factory=lambda: Path(config.DATA_ROOT))
    target_fps: float = config.TARGET_FPS
    _cache: Dict[Path, List[VideoRecord]] = field(default_factory=dict, init=False, repr=False)

    def _resolve(self, path: PathLike) -> Path:
        p = Path(path)
        return p if p.is_absolute() or p.exists() else Path(self.root) / p

    def get_dataset(self, path: PathLike, force_reload: bool = False) -> List[VideoRecord]:
        """Load a dataset at the working frame rate, cached by manifest path."""
        key = _resolve_manifest(self._resolve(path)).resolve()
        if force_reload or key not in self._cache:
            self._cache[key] = [subsample(r, self.target_fps) for r in load_dataset(key)]
        return self._cache[key]

    def get_datasets(self, paths: Sequence[PathLike]) -> Dict[str, List[VideoRecord]]:
        """Load several datasets keyed by their manifest names."""
        out: Dict[str, List[VideoRecord]] = {}
        for p in paths:
            records = self.get_dataset(p)
            name = records[0].source_dataset if records else read_manifest(_resolve_manifest(self._resolve(p))).name
            if name in out:
                raise ConfigurationError(f"dataset name {name!r} given twice")
            out[name] = records
        return out
