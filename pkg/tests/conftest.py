"""Shared fixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import pytest

from models.annotations import ImportanceCurve, KeyframeSet, Keyshots, Segmentation
from services.synthetic_service import SyntheticConfig, SyntheticCorpus, generate_synthetic


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_psd() -> Callable[..., np.ndarray]:
    """Factory for random PSD matrices, optionally rank-deficient."""

    def make(rng: np.random.Generator, n: int, rank: int | None = None, scale: float = 1.0) -> np.ndarray:
        a = rng.normal(size=(n, rank if rank is not None else n))
        m = scale * (a @ a.T) / a.shape[1]
        return 0.5 * (m + m.T)

    return make


def _laplace_det(m: np.ndarray) -> float:
    n = m.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += (-1) ** j * m[0, j] * _laplace_det(minor)
    return total


@pytest.fixture
def cofactor_det() -> Callable[[np.ndarray], float]:
    """Determinant by Laplace expansion along the first row."""
    return _laplace_det


@dataclass(frozen=True)
class FormatFixture:
    """Six frames, three two-frame shots, a five-frame budget."""

    segmentation: Segmentation
    keyframes: KeyframeSet
    keyshots: Keyshots
    scores: ImportanceCurve
    budget: int


@pytest.fixture
def format_fixture() -> FormatFixture:
    return FormatFixture(
        segmentation=Segmentation((0, 2, 4), 6),
        keyframes=KeyframeSet.from_indicator([0, 1, 0, 0, 0, 1]),
        keyshots=Keyshots.from_indicator([1, 1, 0, 0, 1, 1]),
        scores=ImportanceCurve(np.array([0.5, 0.9, 0.1, 0.2, 0.7, 0.8])),
        budget=5,
    )


@pytest.fixture(scope="session")
def small_corpus() -> SyntheticCorpus:
    """Eight short videos; cheap enough for unit tests."""
    return generate_synthetic(
        SyntheticConfig(n_videos=8, min_frames=60, max_frames=80, feature_dim=4, n_clusters=3, teacher_hidden=4, seed=3)
    )
