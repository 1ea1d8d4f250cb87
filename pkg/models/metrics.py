"""Keyshot overlap precision, recall and F-score."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from models.annotations import Keyshots
from utils.errors import ContractError, ShapeError


class Aggregation(str, Enum):
    MEAN = "mean"
    MAX = "max"


@dataclass(frozen=True)
class EvalReport:
    """Overlap scores of one candidate summary.

    Attributes:
        precision (float): Overlap over candidate duration, in ``[0, 1]``.
        recall (float): Overlap over reference duration, in ``[0, 1]``.
        f_score (float): Harmonic mean in percent, ``[0, 100]``.
        per_user (tuple[EvalReport, ...]): One entry per reference when
            several were compared.
    """

    precision: float
    recall: float
    f_score: float
    per_user: Tuple["EvalReport", ...] = field(default_factory=tuple)

    @staticmethod
    def harmonic(precision: float, recall: float) -> float:
        """F-score in percent; 0 when both inputs are 0."""
        total = precision + recall
        return 0.0 if total == 0 else 200.0 * precision * recall / total

    def to_dict(self) -> dict:
        """Plain-dict form for JSON reports."""
        out = {"precision": self.precision, "recall": self.recall, "f_score": self.f_score}
        if self.per_user:
            out["per_user_f"] = [u.f_score for u in self.per_user]
        return out


def overlap_prf(a: Keyshots, b: Keyshots, n_frames: int) -> EvalReport:
    """Compare candidate ``a`` with reference ``b`` frame by frame."""
    if a.n_frames != n_frames or b.n_frames != n_frames:
        raise ShapeError(f"keyshots cover {a.n_frames} and {b.n_frames} frames, expected {n_frames}")
    ia, ib = a.indicator(), b.indicator()
    overlap = int(np.sum(ia & ib))
    dur_a, dur_b = int(ia.sum()), int(ib.sum())
    precision = overlap / dur_a if dur_a else 0.0
    recall = overlap / dur_b if dur_b else 0.0
    return EvalReport(precision, recall, EvalReport.harmonic(precision, recall))


def eval_multi_user(
    candidate: Keyshots,
    refs: Sequence[Keyshots],
    n_frames: int,
    mode: Aggregation = Aggregation.MEAN,
) -> EvalReport:
    """Score ``candidate`` against every reference and aggregate.

    ``mean`` averages precision, recall and F separately; ``max`` reports
    the reference with the highest F (earliest on ties).

    Raises:
        ContractError: If ``refs`` is empty.
    """
    if not refs:
        raise ContractError("multi-user evaluation needs at least one reference")
    per_user = tuple(overlap_prf(candidate, ref, n_frames) for ref in refs)
    if Aggregation(mode) is Aggregation.MAX:
        best = max(range(len(per_user)), key=lambda i: (per_user[i].f_score, -i))
        chosen = per_user[best]
        return EvalReport(chosen.precision, chosen.recall, chosen.f_score, per_user)
    return EvalReport(
        float(np.mean([u.precision for u in per_user])),
        float(np.mean([u.recall for u in per_user])),
        float(np.mean([u.f_score for u in per_user])),
        per_user,
    )


def mean_report(reports: Sequence[EvalReport]) -> EvalReport:
    """Average over videos; an empty sequence yields all zeros."""
    if not reports:
        return EvalReport(0.0, 0.0, 0.0)
    return EvalReport(
        float(np.mean([r.precision for r in reports])),
        float(np.mean([r.recall for r in reports])),
        float(np.mean([r.f_score for r in reports])),
    )


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    arr: List[float] = [float(v) for v in values]
    if not arr:
        return 0.0, 0.0
    return float(np.mean(arr)), float(np.std(arr))
