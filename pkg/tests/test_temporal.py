"""Segmentation, conversions and knapsack selection."""

import itertools

import numpy as np
import pytest

from models.annotations import ImportanceCurve, KeyframeSet, Keyshots, Segmentation
from models.temporal import (
    enumerate_segmentations,
    expand_segment_scores,
    fill_budget,
    kernel_scatters,
    keyframes_to,
    keyshots_to,
    knapsack_select,
    kts_segment,
    scores_to,
)
from utils.errors import EmptyInputError, ShapeError


def _brute_force(items, budget):
    best_key, best = None, []
    for r in range(len(items) + 1):
        for combo in itertools.combinations(range(len(items)), r):
            duration = sum(items[i][1] for i in combo)
            if duration > budget:
                continue
            value = sum(items[i][0] for i in combo)
            key = (-round(value, 9), duration, combo)
            if best_key is None or key < best_key:
                best_key, best = key, list(combo)
    return best


class TestFormatConversions:
    def test_keyframes_to_keyshots(self, format_fixture):
        f = format_fixture
        shots, curve = keyframes_to(f.keyframes, f.segmentation, f.budget)
        assert shots == f.keyshots
        np.testing.assert_array_equal(curve.values, [1, 1, 0, 0, 1, 1])

    def test_keyshots_to_keyframes(self, format_fixture):
        f = format_fixture
        keyframes, curve = keyshots_to(f.keyshots, 6)
        assert keyframes == f.keyframes
        np.testing.assert_array_equal(curve.values, f.keyshots.indicator())

    def test_scores_to_both(self, format_fixture):
        f = format_fixture
        shots, keyframes = scores_to(f.scores, f.segmentation, f.budget)
        assert shots == f.keyshots
        assert keyframes == f.keyframes

    def test_round_trip(self, format_fixture):
        f = format_fixture
        shots, _ = keyframes_to(f.keyframes, f.segmentation, f.budget)
        assert keyshots_to(shots, 6)[0] == f.keyframes

    def test_empty_keyframes(self, format_fixture):
        shots, curve = keyframes_to(KeyframeSet((), 6), format_fixture.segmentation, 5)
        assert len(shots) == 0
        assert not curve.values.any()

    def test_all_keyframes_full_budget(self, format_fixture):
        shots, _ = keyframes_to(KeyframeSet(tuple(range(6)), 6), format_fixture.segmentation, 6)
        assert shots.intervals == ((0, 1), (2, 3), (4, 5))

    def test_single_shot_middle(self):
        keyframes, _ = keyshots_to(Keyshots(((0, 6),), 7), 7)
        assert keyframes.frames == (3,)

    def test_empty_keyshots(self):
        keyframes, curve = keyshots_to(Keyshots((), 4), 4)
        assert len(keyframes) == 0 and not curve.values.any()

    def test_equal_scores_prefer_earlier_shots(self, format_fixture):
        shots, keyframes = scores_to(ImportanceCurve(np.full(6, 0.5)), format_fixture.segmentation, 5)
        assert shots.intervals == ((0, 1), (2, 3))
        assert keyframes.frames == (0, 2)

    def test_zero_budget(self, format_fixture):
        shots, keyframes = scores_to(format_fixture.scores, format_fixture.segmentation, 0)
        assert len(shots) == 0 and len(keyframes) == 0

    def test_length_mismatch(self, format_fixture):
        with pytest.raises(ShapeError):
            scores_to(ImportanceCurve(np.zeros(5)), format_fixture.segmentation, 3)


class TestKnapsack:
    def test_walk_through_items(self):
        assert knapsack_select([(0.7, 2), (0.15, 2), (0.75, 2)], 5) == [0, 2]

    def test_zero_budget(self):
        assert knapsack_select([(1.0, 1)], 0) == []

    def test_prefers_shorter_on_equal_value(self):
        assert knapsack_select([(1.0, 3), (1.0, 2)], 3) == [1]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(1, 13))
            items = [(float(rng.integers(0, 6)) / 4, int(rng.integers(1, 8))) for _ in range(n)]
            budget = int(rng.integers(0, 25))
            chosen = knapsack_select(items, budget)
            expected = _brute_force(items, budget)
            assert sum(items[i][1] for i in chosen) <= budget
            assert chosen == expected

    def test_sixteen_items_value_matches_brute_force(self):
        rng = np.random.default_rng(5)
        items = [(float(rng.uniform()), int(rng.integers(1, 10))) for _ in range(16)]
        chosen = knapsack_select(items, 30)
        expected = _brute_force(items, 30)
        assert sum(items[i][0] for i in chosen) == pytest.approx(sum(items[i][0] for i in expected))


class TestKts:
    def test_constant_features_single_segment(self):
        seg = kts_segment(np.ones((40, 3)), 10)
        assert seg.boundaries == (0,)

    def test_single_step_found_exactly(self):
        for k in (3, 9, 14):
            x = np.vstack([np.zeros((k, 2)), np.ones((20 - k, 2))])
            seg = kts_segment(x, 10, max_segments=2, penalty=1e-6)
            assert seg.boundaries == (0, k)

    def test_matches_exhaustive_search(self):
        x = np.array([[0.0], [0.1], [0.0], [1.0], [1.1], [0.9], [1.0], [3.0], [3.1], [2.9]])
        penalty = 0.05
        scatters = kernel_scatters(x)

        def objective(seg):
            return sum(scatters[s, e] for s, e in seg.intervals()) + penalty * len(seg)

        best = min(enumerate_segmentations(10, 3), key=lambda s: (objective(s), len(s)))
        found = kts_segment(x, 3, max_segments=3, penalty=penalty)
        assert objective(found) == pytest.approx(objective(best), abs=1e-12)
        assert found.boundaries == (0, 3, 7)

    def test_calibrated_mean_length(self):
        rng = np.random.default_rng(0)
        levels = rng.normal(size=(12, 4)) * 3
        x = np.repeat(levels, 10, axis=0) + 0.01 * rng.normal(size=(120, 4))
        seg = kts_segment(x, 10)
        assert 7.5 <= 120 / len(seg) <= 12.5

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            kts_segment(np.zeros((0, 3)), 10)


class TestFillBudget:
    def test_adds_best_free_segment(self):
        seg = Segmentation((0, 2, 4, 6), 8)
        shots = Keyshots(((0, 1),), 8)
        scores = np.array([0.1, 0.1, 0.2, 0.2, 0.9, 0.9, 0.5, 0.5])
        filled = fill_budget(shots, seg, scores, 4)
        assert filled.intervals == ((0, 1), (4, 5))

    def test_full_budget_unchanged(self):
        seg = Segmentation((0, 2), 4)
        shots = Keyshots(((0, 1),), 4)
        assert fill_budget(shots, seg, np.ones(4), 2) == shots

    def test_expand_segment_scores(self):
        seg = Segmentation((0, 1, 3), 4)
        np.testing.assert_array_equal(expand_segment_scores(seg, np.array([0.1, 0.2, 0.3])), [0.1, 0.2, 0.2, 0.3])
