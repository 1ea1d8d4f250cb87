"""Dense double-precision matrix helpers.

Thin, validated wrappers around numpy/scipy used by the DPP code, the
covariance alignment and the tests.  Matrices are plain ``np.ndarray``
objects of dtype float64; every public function returns finite arrays or
raises.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.linalg import cho_solve

from utils import config
from utils.errors import ContractError, InsufficientDataError, NotPsdError, NumericError, ShapeError

logger = logging.getLogger(__name__)

Matrix = np.ndarray

_SYMMETRY_TOL = 1e-9
_JITTER_STEPS = 7  # jitter, 10*jitter, ..., 1e6*jitter


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor of ``m + jitter_used * I``.

    Attributes:
        lower (np.ndarray): Lower-triangular factor with positive diagonal.
        jitter_used (float): Diagonal shift that made the factorisation succeed.
    """

    lower: Matrix
    jitter_used: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(m + jitter_used * I) x = rhs``."""
        return cho_solve((self.lower, True), rhs)

    def inverse(self) -> Matrix:
        """Symmetrised inverse of ``m + jitter_used * I``."""
        n = self.lower.shape[0]
        inv = self.solve(np.eye(n))
        return 0.5 * (inv + inv.T)


def as_matrix(a: np.ndarray, name: str = "matrix") -> Matrix:
    """Return ``a`` as a finite 2-D float64 array or raise."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def _check_square_symmetric(m: Matrix, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and float(np.max(np.abs(m - m.T))) > _SYMMETRY_TOL * scale:
        raise ShapeError(f"{name} is not symmetric")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product with a shape check.

    Raises:
        ShapeError: If ``a.cols != b.rows``.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def jitter_ladder(jitter: float) -> List[float]:
    """Diagonal shifts tried in order by :func:`cholesky_psd`."""
    if jitter < 0:
        raise ContractError("jitter must be non-negative")
    if jitter == 0:
        return [0.0]
    return [0.0] + [jitter * 10.0**k for k in range(_JITTER_STEPS)]


def cholesky_psd(m: Matrix, jitter: float = config.JITTER) -> CholeskyFactor:
    """Cholesky factorisation with an escalating diagonal jitter.

    The smallest shift in ``{0, jitter, 10*jitter, ..., 1e6*jitter}`` for
    which the factorisation succeeds is used.

    Args:
        m (np.ndarray): Square symmetric matrix.
        jitter (float): First non-zero rung of the ladder.

    Returns:
        CholeskyFactor: The factor and the shift that was needed.

    Raises:
        ShapeError: If ``m`` is not square and symmetric.
        NotPsdError: If the factorisation fails at the largest shift.
    """
    m = as_matrix(m)
    _check_square_symmetric(m, "matrix")
    n = m.shape[0]
    eye = np.eye(n)
    for shift in jitter_ladder(jitter):
        try:
            lower = np.linalg.cholesky(m + shift * eye if shift else m)
        except np.linalg.LinAlgError:
            continue
        diag = np.diag(lower)
        if np.all(diag > 0) and np.all(np.isfinite(lower)):
            if shift:
                logger.debug("cholesky needed jitter %.1e for n=%d", shift, n)
            return CholeskyFactor(lower=lower, jitter_used=shift)
    raise NotPsdError(f"matrix of size {n} is not PSD even with jitter {jitter_ladder(jitter)[-1]:.1e}")


def logdet_psd(m: Matrix, jitter: float = config.JITTER) -> float:
    """Log-determinant of a PSD matrix via :func:`cholesky_psd`.

    An empty matrix has determinant 1.
    """
    m = as_matrix(m)
    if m.shape == (0, 0):
        return 0.0
    factor = cholesky_psd(m, jitter)
    return float(2.0 * np.sum(np.log(np.diag(factor.lower))))


def sym_eig(m: Matrix) -> Tuple[np.ndarray, Matrix]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns:
        tuple: ``(eigenvalues, eigenvectors)`` with ``m = V diag(w) V^T``
        and orthonormal columns in ``V``.

    Raises:
        ShapeError: If ``m`` is not square and symmetric.
    """
    m = as_matrix(m)
    _check_square_symmetric(m, "matrix")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def sym_power(m: Matrix, power: float, floor: float = 0.0) -> Matrix:
    """Matrix power of a symmetric PSD matrix through its eigenbasis.

    Eigenvalues below ``floor`` are raised to ``floor`` first so that
    negative powers stay finite.
    """
    w, v = sym_eig(m)
    w = np.maximum(w, floor)
    if power < 0 and np.any(w <= 0):
        raise NotPsdError("negative power of a singular matrix; add a ridge")
    out = (v * w**power) @ v.T
    return 0.5 * (out + out.T)


def covariance(x: Matrix) -> Matrix:
    """Unbiased sample covariance of the rows of ``x``.

    Raises:
        InsufficientDataError: If ``x`` has fewer than two rows.
    """
    x = as_matrix(x, "samples")
    if x.shape[0] < 2:
        raise InsufficientDataError(f"covariance needs at least 2 rows, got {x.shape[0]}")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    return 0.5 * (cov + cov.T)
