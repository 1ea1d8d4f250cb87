"""DPP likelihood, gradient, MAP and normalisation."""

import itertools
import math

import numpy as np
import pytest

from models.dpp import (
    LOG_ZERO_FLOOR,
    DppKernel,
    dpp_log_prob,
    dpp_nll,
    dpp_nll_grad,
    map_exhaustive,
    map_greedy,
    normalization_check,
    subset_log_det,
)
from utils.errors import ContractError, NumericError, ShapeError, SizeGuardError


class TestKernel:
    def test_quality_diversity_construction(self, rng):
        y = rng.uniform(size=7)
        phi = rng.normal(size=(7, 3))
        k = DppKernel.from_quality_diversity(y, phi)
        for t, u in itertools.product(range(7), repeat=2):
            assert k.l[t, u] == pytest.approx(y[t] * y[u] * float(phi[t] @ phi[u]), abs=1e-12)
        assert k.is_psd()

    def test_rejects_asymmetric(self):
        with pytest.raises(ShapeError):
            DppKernel(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_duplicate_frames_have_zero_probability(self):
        phi = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        k = DppKernel.from_quality_diversity(np.ones(3), phi)
        assert dpp_log_prob(k, [0, 1]) == LOG_ZERO_FLOOR
        assert subset_log_det(k, [0, 1]) == LOG_ZERO_FLOOR
        assert dpp_log_prob(k, [0, 2]) > LOG_ZERO_FLOOR


class TestLogProb:
    @pytest.mark.parametrize("subset", [[], [0], [1, 3], [0, 1, 2, 3]])
    def test_identity_kernel(self, subset):
        k = DppKernel(np.eye(4))
        assert dpp_log_prob(k, subset) == pytest.approx(-4 * math.log(2.0), rel=1e-12)

    def test_matches_cofactor_expansion(self, rng, random_psd, cofactor_det):
        for n in range(2, 9):
            k = DppKernel(random_psd(rng, n) + 0.05 * np.eye(n))
            subset = sorted(rng.choice(n, size=max(1, n // 2), replace=False).tolist())
            expected = math.log(cofactor_det(k.minor(subset)) / cofactor_det(k.l + np.eye(n)))
            assert dpp_log_prob(k, subset) == pytest.approx(expected, rel=1e-9)

    def test_nll_is_negative_log_prob(self, rng, random_psd):
        k = DppKernel(random_psd(rng, 6) + 0.1 * np.eye(6))
        assert dpp_nll(k, [1, 4]) == pytest.approx(-dpp_log_prob(k, [1, 4]), rel=1e-9)

    @pytest.mark.parametrize("subset", [[0, 0], [5]])
    def test_invalid_subset(self, subset):
        with pytest.raises(ContractError):
            dpp_log_prob(DppKernel(np.eye(3)), subset)


class TestGradient:
    def test_matches_finite_differences(self, rng, random_psd):
        n = 6
        l = random_psd(rng, n) + 0.2 * np.eye(n)
        subset = [0, 2, 5]
        grad = dpp_nll_grad(DppKernel(l), subset)
        step = 1e-6
        for i, j in itertools.combinations_with_replacement(range(n), 2):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = step
            numeric = (dpp_nll(DppKernel(l + e), subset) - dpp_nll(DppKernel(l - e), subset)) / (2 * step)
            analytic = grad[i, j] * (1 if i == j else 2)
            assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-8)

    def test_identity_kernel_gradient(self):
        grad = dpp_nll_grad(DppKernel(np.eye(3)), [1])
        expected = 0.5 * np.eye(3)
        expected[1, 1] -= 1.0
        np.testing.assert_allclose(grad, expected, atol=1e-12)

    def test_full_subset_on_identity(self):
        grad = dpp_nll_grad(DppKernel(np.eye(4)), [0, 1, 2, 3])
        np.testing.assert_allclose(grad, -0.5 * np.eye(4), atol=1e-12)

    def test_rank_deficient_minor_uses_jitter(self):
        grad = dpp_nll_grad(DppKernel(np.ones((2, 2))), [0, 1])
        assert np.all(np.isfinite(grad))

    def test_minor_needing_largest_jitter(self):
        with pytest.raises(NumericError):
            dpp_nll_grad(DppKernel(np.diag([1.0, -5e-5])), [0, 1])

    def test_minor_failing_every_jitter(self):
        with pytest.raises(NumericError):
            dpp_nll_grad(DppKernel(np.diag([1.0, -1.0])), [0, 1])


class TestMap:
    def test_exhaustive_hand_case(self):
        assert map_exhaustive(DppKernel(np.diag([3.0, 0.5, 2.0]))) == [0, 2]

    def test_greedy_hand_case(self):
        assert map_greedy(DppKernel(np.diag([3.0, 0.5, 2.0]))) == [0, 2]

    def test_empty_kernel(self):
        k = DppKernel(np.zeros((0, 0)))
        assert map_greedy(k) == []
        assert map_exhaustive(k) == []

    def test_identity_kernel_selects_nothing(self):
        assert map_greedy(DppKernel(np.eye(4))) == []
        assert map_exhaustive(DppKernel(np.eye(4))) == []

    def test_correlated_pair_keeps_first(self):
        k = DppKernel(np.array([[2.0, 1.9], [1.9, 2.0]]))
        assert map_exhaustive(k) == [0]
        assert map_greedy(k) == [0]

    def test_small_kernel_selects_nothing(self):
        assert map_greedy(DppKernel(0.5 * np.eye(3))) == []
        assert map_exhaustive(DppKernel(0.5 * np.eye(3))) == []

    def test_exhaustive_size_guard(self):
        with pytest.raises(SizeGuardError):
            map_exhaustive(DppKernel(np.eye(21)))

    def test_greedy_within_half_of_optimum(self, random_psd):
        rng = np.random.default_rng(2016)
        good = 0
        for trial in range(200):
            n = int(rng.integers(2, 13))
            k = DppKernel(random_psd(rng, n, rank=int(rng.integers(1, n + 1)), scale=float(rng.uniform(0.5, 4.0))))
            det = lambda z: float(np.linalg.det(k.minor(z))) if z else 1.0
            if det(map_greedy(k)) >= 0.5 * det(map_exhaustive(k)) - 1e-12:
                good += 1
        assert good >= 180

    def test_far_apart_distinct_segments_both_kept(self):
        n = 12
        y = np.full(n, 0.3)
        y[[1, 10]] = 2.0
        phi = np.zeros((n, 3))
        phi[:, 2] = 1.0
        phi[1] = [1.0, 0.0, 0.0]
        phi[10] = [0.0, 1.0, 0.0]
        k = DppKernel.from_quality_diversity(y, phi)
        best = map_exhaustive(k)
        assert {1, 10} <= set(best)
        assert {1, 10} <= set(map_greedy(k))


class TestNormalization:
    def test_identity_holds_on_random_kernels(self, random_psd):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(1, 13))
            k = DppKernel(random_psd(rng, n, scale=float(rng.uniform(0.1, 2.0))))
            assert normalization_check(k) < 1e-8

    def test_size_guard(self):
        with pytest.raises(SizeGuardError):
            normalization_check(DppKernel(np.eye(17)))
