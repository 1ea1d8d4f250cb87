"""Second-order feature alignment between datasets.

Source features are whitened with their own covariance and re-coloured
with the target covariance, so ``cov(x @ M)`` approximates the target's.
Means are left untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from models.annotations import validate_features
from utils.errors import ContractError, NumericError, ShapeError
from utils.linalg import as_matrix, covariance, matmul, sym_power

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-3


@dataclass(frozen=True, eq=False)
class LinearTransform:
    """``d x d`` matrix applied to row feature vectors as ``v @ matrix``.

    Attributes:
        matrix (np.ndarray): The transform.
        fitted_on (tuple[str, ...]): Dataset names, source first.
        ridge (float): Ridge added to both covariances during fitting.
    """

    matrix: np.ndarray
    fitted_on: Tuple[str, ...] = ()
    ridge: float = 0.0

    def __post_init__(self) -> None:
        m = as_matrix(self.matrix, "transform")
        if m.shape[0] != m.shape[1]:
            raise ShapeError(f"transform must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NumericError("transform contains non-finite entries")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "fitted_on", tuple(self.fitted_on))

    @classmethod
    def identity(cls, dim: int) -> "LinearTransform":
        """Transform that leaves features unchanged."""
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


def default_ridge(c_source: np.ndarray, c_target: np.ndarray) -> float:
    """``1e-3 * trace(C) / d`` with ``trace(C)`` averaged over both sides."""
    d = c_source.shape[0]
    return RIDGE_SCALE * 0.5 * (float(np.trace(c_source)) + float(np.trace(c_target))) / d


def fit_align(
    source_features: np.ndarray,
    target_features: np.ndarray,
    ridge: Optional[float] = None,
    fitted_on: Tuple[str, ...] = (),
) -> LinearTransform:
    """Fit ``M = (C_s + rI)^{-1/2} (C_t + rI)^{1/2}``.

    Args:
        source_features (np.ndarray): ``n_s x d`` rows from the dataset to move.
        target_features (np.ndarray): ``n_t x d`` rows from the anchor dataset.
        ridge (float, optional): Added to both covariances; defaults to
            :func:`default_ridge`.
        fitted_on (tuple[str, ...]): Names recorded in the result.

    Raises:
        ShapeError: If the feature dimensions differ.
        InsufficientDataError: If either side has fewer than two rows.
    """
    src = as_matrix(source_features, "source features")
    tgt = as_matrix(target_features, "target features")
    if src.shape[1] != tgt.shape[1]:
        raise ShapeError(f"source dim {src.shape[1]} differs from target dim {tgt.shape[1]}")
    c_s, c_t = covariance(src), covariance(tgt)
    r = default_ridge(c_s, c_t) if ridge is None else float(ridge)
    if r < 0:
        raise ContractError("ridge must be non-negative")
    eye = np.eye(c_s.shape[0])
    whiten = sym_power(c_s + r * eye, -0.5)
    colour = sym_power(c_t + r * eye, 0.5)
    logger.debug("fitted alignment %s with ridge %.3g", fitted_on, r)
    return LinearTransform(matmul(whiten, colour), fitted_on, r)


def apply_transform(t: LinearTransform, x: np.ndarray) -> np.ndarray:
    """Multiply every frame feature row by ``t.matrix``."""
    x = validate_features(x)
    if x.shape[1] != t.dim:
        raise ShapeError(f"features of dim {x.shape[1]}, transform expects {t.dim}")
    return matmul(x, t.matrix)
