"""Run directories and atomic file output.

Every command writes below its own run directory named
``<YYYYmmdd-HHMMSS>-seed<N>`` together with an ``options.json`` holding
the resolved options, so a run can be repeated from what it left behind.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

from utils import config

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("wrote %s (%d bytes)", target, len(data))
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    """UTF-8 text through :func:`atomic_write_bytes`."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj: Any) -> str:
    """Stable JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj: Any) -> Any:
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value"):  # enums
        return obj.value
    if hasattr(obj, "tolist"):  # numpy scalars and arrays
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def run_name(seed: int, now: Optional[datetime] = None) -> str:
    """Timestamped directory name tagged with the seed."""
    stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
    return f"{stamp}-seed{seed}"


@dataclass
class RunService:
    """Owns one run directory.

    Args:
        root (Path): Parent directory of all runs.
        seed (int): Seed recorded in the directory name.
        directory (Path, optional): Use this directory instead of creating
            a timestamped one.
    """

    root: Path = field(default_factory=lambda: Path(config.DATA_ROOT) / "runs")
    seed: int = config.SEED
    directory: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.directory is None:
            self.directory = Path(self.root) / run_name(self.seed)
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        logger.info("run directory %s", self.directory)

    def path(self, *parts: str) -> Path:
        return self.directory.joinpath(*parts)

    def write_text(self, name: str, text: str) -> Path:
        return atomic_write_text(self.path(name), text)

    def write_bytes(self, name: str, data: bytes) -> Path:
        return atomic_write_bytes(self.path(name), data)

    def write_json(self, name: str, obj: Any) -> Path:
        return self.write_text(name, dump_json(obj))

    def record_options(self, options: Dict[str, Any]) -> Path:
        """Write the resolved options as ``options.json``."""
        return self.write_json("options.json", options)
