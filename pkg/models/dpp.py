"""Determinantal point process over the frames of one video.

``P(z) = det(L_z) / det(L + I)`` for an ``L`` ensemble kernel.  The module
provides the exact log-likelihood, the training objective and its kernel
gradient, a greedy MAP routine built on incremental Cholesky updates, and
exhaustive oracles for small ground sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, List, Sequence

import numpy as np

from utils import config
from utils.errors import ContractError, NotPsdError, NumericError, ShapeError, SizeGuardError
from utils.linalg import as_matrix, cholesky_psd, jitter_ladder, logdet_psd, sym_eig

logger = logging.getLogger(__name__)

LOG_ZERO_FLOOR = -1e18
MAX_EXHAUSTIVE = 20
MAX_NORMALIZATION = 16

_PSD_TOL = 1e-9
# a pivot this small relative to its diagonal entry marks a singular minor
_SINGULAR_PIVOT = 1e-12


@dataclass(frozen=True, eq=False)
class DppKernel:
    """Symmetric PSD ``L`` ensemble kernel.

    Attributes:
        l (np.ndarray): ``T x T`` kernel.
        jitter (float): First rung of the Cholesky jitter ladder used for
            training quantities.
    """

    l: np.ndarray
    jitter: float = config.JITTER

    def __post_init__(self) -> None:
        m = as_matrix(self.l, "kernel")
        if m.shape[0] != m.shape[1]:
            raise ShapeError(f"kernel must be square, got {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if m.size and float(np.max(np.abs(m - m.T))) > _PSD_TOL * scale:
            raise ShapeError("kernel is not symmetric")
        object.__setattr__(self, "l", m)

    @classmethod
    def from_quality_diversity(cls, quality: np.ndarray, embeddings: np.ndarray, jitter: float = config.JITTER) -> "DppKernel":
        """``L = (y y^T) * (Phi Phi^T)`` elementwise."""
        y = np.asarray(quality, dtype=np.float64).reshape(-1)
        phi = np.asarray(embeddings, dtype=np.float64)
        if phi.ndim != 2 or phi.shape[0] != y.shape[0]:
            raise ShapeError(f"quality {y.shape} and embeddings {phi.shape} disagree")
        return cls(np.outer(y, y) * (phi @ phi.T), jitter)

    @property
    def n(self) -> int:
        return int(self.l.shape[0])

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue, 0 for an empty kernel."""
        return float(sym_eig(self.l)[0][-1]) if self.n else 0.0

    def is_psd(self) -> bool:
        """True when no eigenvalue is below ``-1e-9``."""
        return self.min_eigenvalue() >= -_PSD_TOL

    def minor(self, z: Sequence[int]) -> np.ndarray:
        """Principal submatrix ``L_z``."""
        idx = np.asarray(z, dtype=np.int64)
        return self.l[np.ix_(idx, idx)]


def validate_subset(z: Iterable[int], n: int) -> List[int]:
    """Return ``z`` as a sorted list of distinct indices in ``[0, n)``.

    Raises:
        ContractError: On duplicates or out-of-range indices.
    """
    items = [int(i) for i in z]
    if len(set(items)) != len(items):
        raise ContractError("subset contains duplicate indices")
    for i in items:
        if i < 0 or i >= n:
            raise ContractError(f"index {i} outside ground set of size {n}")
    return sorted(items)


def _exact_logdet(m: np.ndarray) -> float:
    """Log-determinant with singular minors mapped to the floor."""
    if m.shape[0] == 0:
        return 0.0
    try:
        factor = cholesky_psd(m, 0.0)
    except NotPsdError:
        return LOG_ZERO_FLOOR
    pivots = np.diag(factor.lower) ** 2
    if np.any(pivots <= _SINGULAR_PIVOT * np.maximum(np.diag(m), np.finfo(float).tiny)):
        return LOG_ZERO_FLOOR
    return float(np.sum(np.log(pivots)))


def dpp_log_prob(k: DppKernel, z: Iterable[int]) -> float:
    """``log det(L_z) - log det(L + I)``, floored at ``-1e18``.

    The empty subset has numerator determinant 1.
    """
    idx = validate_subset(z, k.n)
    numerator = _exact_logdet(k.minor(idx))
    if numerator == LOG_ZERO_FLOOR:
        return LOG_ZERO_FLOOR
    return max(numerator - logdet_psd(k.l + np.eye(k.n), 0.0), LOG_ZERO_FLOOR)


def dpp_nll(k: DppKernel, z: Iterable[int]) -> float:
    """Training objective ``logdet(L + I) - logdet(L_z)`` with jitter.

    Uses the same jitter ladder as :func:`dpp_nll_grad` so that value and
    gradient describe one function.
    """
    idx = validate_subset(z, k.n)
    return logdet_psd(k.l + np.eye(k.n), k.jitter) - logdet_psd(k.minor(idx), k.jitter)


def dpp_nll_grad(k: DppKernel, z: Iterable[int]) -> np.ndarray:
    """Gradient of the negative log-likelihood with respect to ``L``.

    ``(L + I)^{-1} - pad(L_z^{-1})`` where ``pad`` scatters the inverse of
    the principal minor back into the ``z`` rows and columns.  A minor that
    factorises below the top rung of the jitter ladder is inverted with
    that jitter added, matching :func:`dpp_nll`.

    Raises:
        NumericError: If the minor fails the whole ladder or only factorises
            at its top rung.
    """
    idx = validate_subset(z, k.n)
    grad = cholesky_psd(k.l + np.eye(k.n), k.jitter).inverse()
    if idx:
        try:
            factor = cholesky_psd(k.minor(idx), k.jitter)
        except NotPsdError as exc:
            raise NumericError(f"principal minor of size {len(idx)} is singular") from exc
        top = jitter_ladder(k.jitter)[-1]
        if top > 0 and factor.jitter_used == top:
            raise NumericError(f"principal minor of size {len(idx)} needed the largest jitter {top:.1e}")
        grad[np.ix_(idx, idx)] -= factor.inverse()
    return 0.5 * (grad + grad.T)


def map_greedy(k: DppKernel) -> List[int]:
    """Greedy approximate MAP.

    Starting from the empty set, repeatedly add the item with the largest
    log-determinant gain while that gain is strictly positive; ties go to
    the smallest index.  Gains come from an incrementally updated Cholesky
    factor, so ``di2[i] = det(L_{S+i}) / det(L_S)``.
    """
    n = k.n
    if n == 0:
        return []
    cis = np.zeros((n, n))
    di2 = np.diag(k.l).copy()
    available = np.ones(n, dtype=bool)
    selected: List[int] = []
    while available.any():
        candidates = np.where(available, di2, -np.inf)
        best = int(np.argmax(candidates))
        if not candidates[best] > 1.0:
            break
        step = len(selected)
        selected.append(best)
        available[best] = False
        e = (k.l[best, :] - cis[:step, best] @ cis[:step, :]) / np.sqrt(di2[best])
        cis[step, :] = e
        di2 = di2 - e**2
    return sorted(selected)


def _subset_dets(l: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """All subsets of one size and their determinants."""
    n = l.shape[0]
    if size == 0:
        return np.zeros((1, 0), dtype=np.int64), np.ones(1)
    subsets = np.asarray(list(combinations(range(n), size)), dtype=np.int64)
    minors = l[subsets[:, :, None], subsets[:, None, :]]
    return subsets, np.linalg.det(minors)


def map_exhaustive(k: DppKernel) -> List[int]:
    """Exact MAP by enumerating all ``2^T`` subsets.

    Ties are resolved towards the lexicographically smallest subset; the
    empty set has determinant 1.

    Raises:
        SizeGuardError: If ``T > 20``.
    """
    if k.n > MAX_EXHAUSTIVE:
        raise SizeGuardError(f"exhaustive MAP limited to {MAX_EXHAUSTIVE} items, got {k.n}")
    best_subset: tuple = ()
    best_det = 1.0
    for size in range(1, k.n + 1):
        subsets, dets = _subset_dets(k.l, size)
        for subset, det in zip(subsets, dets):
            candidate = tuple(int(i) for i in subset)
            tol = 1e-12 * max(1.0, abs(best_det))
            if det > best_det + tol or (abs(det - best_det) <= tol and candidate < best_subset):
                best_subset, best_det = candidate, float(det)
    return list(best_subset)


def subset_log_det(k: DppKernel, z: Iterable[int]) -> float:
    """``log det(L_z)`` of the principal minor, floored like :func:`dpp_log_prob`."""
    return _exact_logdet(k.minor(validate_subset(z, k.n)))


def normalization_check(k: DppKernel) -> float:
    """Relative gap between ``sum_z det(L_z)`` and ``det(L + I)``.

    Raises:
        SizeGuardError: If ``T > 16``.
    """
    if k.n > MAX_NORMALIZATION:
        raise SizeGuardError(f"normalization check limited to {MAX_NORMALIZATION} items, got {k.n}")
    total = sum(float(np.sum(_subset_dets(k.l, size)[1])) for size in range(k.n + 1))
    reference = float(np.linalg.det(k.l + np.eye(k.n)))
    return abs(total - reference) / reference
