import numpy as np
import pytest

from models.adapt import LinearTransform, apply_transform, default_ridge, fit_align
from utils.errors import ContractError, InsufficientDataError, NumericError, ShapeError


class TestFitAlign:
    def test_same_distribution_gives_identity(self, rng):
        x = rng.normal(size=(200, 4)) @ rng.normal(size=(4, 4))
        t = fit_align(x, x)
        np.testing.assert_allclose(t.matrix, np.eye(4), atol=1e-8)

    def test_one_dimensional_scale(self):
        src = np.array([[-np.sqrt(2.0)], [np.sqrt(2.0)]])
        tgt = np.array([[-3.0 / np.sqrt(2.0)], [3.0 / np.sqrt(2.0)]])
        t = fit_align(src, tgt, ridge=0.0)
        assert t.matrix[0, 0] == pytest.approx(1.5)

    def test_scale_ratio_on_samples(self, rng):
        src = 2.0 * rng.normal(size=(50, 1))
        tgt = 3.0 * rng.normal(size=(50, 1))
        t = fit_align(src, tgt, ridge=0.0)
        assert t.matrix[0, 0] == pytest.approx(np.sqrt(np.var(tgt) / np.var(src)))

    def test_covariance_gap_shrinks(self):
        rng = np.random.default_rng(21)
        src = rng.normal(size=(500, 5)) * np.array([4.0, 3.0, 3.0, 2.0, 2.0])
        tgt = rng.normal(size=(500, 5)) @ rng.normal(size=(5, 5))
        c_t = np.cov(tgt, rowvar=False)
        before = np.linalg.norm(np.cov(src, rowvar=False) - c_t)
        after = np.linalg.norm(np.cov(apply_transform(fit_align(src, tgt), src), rowvar=False) - c_t)
        assert after <= 0.01 * before

    def test_records_provenance(self, rng):
        t = fit_align(rng.normal(size=(10, 2)), rng.normal(size=(10, 2)), fitted_on=("tvsum", "summe"))
        assert t.fitted_on == ("tvsum", "summe")
        assert t.ridge > 0

    def test_negative_ridge(self, rng):
        with pytest.raises(ContractError):
            fit_align(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), ridge=-1.0)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fit_align(rng.normal(size=(5, 2)), rng.normal(size=(5, 3)))

    def test_needs_two_rows(self, rng):
        with pytest.raises(InsufficientDataError):
            fit_align(rng.normal(size=(1, 2)), rng.normal(size=(5, 2)))

    def test_default_ridge(self):
        assert default_ridge(np.eye(2) * 2.0, np.eye(2) * 4.0) == pytest.approx(3e-3)


class TestApply:
    def test_identity(self, rng):
        x = rng.normal(size=(6, 3))
        np.testing.assert_array_equal(apply_transform(LinearTransform.identity(3), x), x)

    def test_row_multiplication(self):
        t = LinearTransform(np.array([[0.0, 1.0], [2.0, 0.0]]))
        np.testing.assert_allclose(apply_transform(t, np.array([[1.0, 3.0]])), [[6.0, 1.0]])

    def test_dimension_checked(self):
        with pytest.raises(ShapeError):
            apply_transform(LinearTransform.identity(3), np.zeros((4, 2)))

    def test_rejects_bad_matrices(self):
        with pytest.raises(ShapeError):
            LinearTransform(np.zeros((2, 3)))
        with pytest.raises(NumericError):
            LinearTransform(np.array([[np.nan]]))
