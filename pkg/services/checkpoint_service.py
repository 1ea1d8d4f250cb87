"""Versioned binary checkpoints.

Layout::

    b"VSCK" | version (1 byte) | header length (uint32 LE) | JSON header
    float64 LE parameter data in header order

The header carries the model kind, the network configuration, the
metadata dict and ``[name, shape]`` for every parameter.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from models.networks import ModelCheckpoint, ModelKind, NetworkConfig
from services.run_service import PathLike, atomic_write_bytes
from utils.errors import ParseError, SummarizationError, VersionError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"VSCK"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def encode_checkpoint(checkpoint: ModelCheckpoint) -> bytes:
    """Serialise a checkpoint to the ``VSCK`` layout."""
    names = sorted(checkpoint.params)
    header = {
        "kind": checkpoint.kind.value,
        "config": checkpoint.config.to_dict(),
        "metadata": checkpoint.metadata,
        "params": [[name, list(checkpoint.params[name].shape)] for name in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(checkpoint.params[n], dtype="<f8").tobytes() for n in names)
    return _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + body


def decode_checkpoint(data: bytes) -> ModelCheckpoint:
    """Parse :func:`encode_checkpoint` output.

    Raises:
        ParseError: On a bad magic, a malformed header or truncation, with
            the byte offset where parsing stopped.
        VersionError: On an unknown version byte.
    """
    if len(data) < _PREFIX.size:
        raise ParseError("truncated checkpoint prefix", field="prefix", offset=len(data))
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"bad magic {magic!r}", field="magic", offset=0)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", field="version", offset=4)
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise ParseError("truncated checkpoint header", field="header", offset=len(data))
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
        kind = ModelKind(header["kind"])
        config_dict = header["config"]
        layout: List[Any] = header["params"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed checkpoint header: {exc}", field="header", offset=start) from exc
    try:
        cfg = NetworkConfig.from_dict(config_dict)
    except (SummarizationError, TypeError) as exc:
        raise ParseError(f"invalid network config: {exc}", field="config", offset=start) from exc

    offset = start + header_len
    params: Dict[str, np.ndarray] = {}
    for name, shape in layout:
        size = int(np.prod(shape)) * 8
        if len(data) < offset + size:
            raise ParseError(f"checkpoint truncated inside {name}", field=name, offset=len(data))
        params[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += size
    if offset != len(data):
        raise ParseError(f"{len(data) - offset} trailing bytes", field="data", offset=offset)
    return ModelCheckpoint(kind, cfg, params, dict(header.get("metadata") or {}))


def save_checkpoint(path: PathLike, checkpoint: ModelCheckpoint) -> Path:
    """Write a checkpoint atomically."""
    target = atomic_write_bytes(path, encode_checkpoint(checkpoint))
    logger.info("saved %s checkpoint to %s", checkpoint.kind.value, target)
    return target


def load_checkpoint(path: PathLike) -> ModelCheckpoint:
    """Read a checkpoint file.

    Raises:
        ParseError: If the file cannot be read or decoded.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint {path}: {exc}", field="file") from exc
    return decode_checkpoint(data)
