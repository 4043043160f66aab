import numpy as np
import pytest

from conftest import random_spd
from onesided.errors import DegenerateMatrixError, DimensionError
from onesided.linalg import (CovEstimate, CovKind, SpdMatrix, conditional_cov, correlation_of,
                             quad_form, sample_covariance)

S_N = [[0.01282, 0.01586], [0.01586, 0.04022]]


class TestSpdMatrix:
    def test_symmetry_is_exact(self):
        a = np.array([[2.0, 0.3], [0.3 + 1e-14, 1.0]])
        m = SpdMatrix(a)
        assert np.array_equal(m.entries, m.entries.T)

    def test_rejects_asymmetric(self):
        with pytest.raises(DegenerateMatrixError):
            SpdMatrix([[1.0, 0.5], [0.2, 1.0]])

    @pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros((0, 0)), np.eye(9)])
    def test_rejects_bad_shape(self, bad):
        with pytest.raises(DimensionError):
            SpdMatrix(bad)

    @pytest.mark.parametrize("a", [
        [[1.0, 1.0], [1.0, 1.0]],
        [[1.0, 0.0], [0.0, -1.0]],
        [[1.0, 0.0], [0.0, 1e-22]],
    ])
    def test_singular_raises_on_factor(self, a):
        m = SpdMatrix(a)
        assert not m.usable
        with pytest.raises(DegenerateMatrixError):
            m.chol

    def test_ill_conditioned_factorizes_but_is_unusable(self):
        m = SpdMatrix([[1.0, 0.0], [0.0, 1e-13]])
        assert not m.usable
        m.chol

    def test_non_finite(self):
        with pytest.raises(DegenerateMatrixError):
            SpdMatrix([[1.0, np.inf], [np.inf, 1.0]])

    @pytest.mark.parametrize("p", range(1, 9))
    def test_factor_round_trip(self, p):
        rng = np.random.default_rng(p)
        for _ in range(20):
            a = random_spd(rng, p, 0.01, 10.0)
            m = SpdMatrix(a)
            L = m.chol
            assert np.max(np.abs(L @ L.T - m.entries)) <= 1e-10 * np.max(np.abs(a))

    def test_inverse_and_solve(self):
        rng = np.random.default_rng(0)
        a = random_spd(rng, 4)
        m = SpdMatrix(a)
        np.testing.assert_allclose(m.inverse().entries @ a, np.eye(4), atol=1e-12)
        b = rng.standard_normal(4)
        np.testing.assert_allclose(a @ m.solve(b), b, atol=1e-12)

    def test_correlation_matrix(self):
        c = SpdMatrix([[4.0, 1.0], [1.0, 1.0]]).correlation()
        np.testing.assert_allclose(c, [[1.0, 0.5], [0.5, 1.0]])


class TestQuadForm:
    def test_identity(self):
        assert quad_form(SpdMatrix.identity(2), [3.0, 4.0]) == pytest.approx(25.0, rel=1e-15)

    def test_published_summary(self):
        assert quad_form(SpdMatrix(S_N), [0.69, 1.53]) == pytest.approx(59.33, abs=0.02)

    def test_against_explicit_inverse(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = random_spd(rng, 3)
            v = rng.standard_normal(3)
            oracle = v @ np.linalg.inv(a) @ v
            assert quad_form(SpdMatrix(a), v) == pytest.approx(oracle, rel=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            quad_form(SpdMatrix.identity(2), [1.0, 2.0, 3.0])


class TestCorrelation:
    def test_identity(self):
        assert correlation_of(SpdMatrix.identity(3), 0, 2) == 0.0

    def test_published_summary(self):
        assert correlation_of(SpdMatrix(S_N), 0, 1) == pytest.approx(0.6985, abs=1e-4)

    def test_clamped_at_minus_one(self):
        assert correlation_of(SpdMatrix([[1.0, -1.0], [-1.0, 1.0]]), 0, 1) == -1 + 1e-12
        assert correlation_of(SpdMatrix([[1.0, 1.0 + 1e-9], [1.0 + 1e-9, 1.0]]), 0, 1) == 1 - 1e-12

    def test_zero_variance(self):
        with pytest.raises(DegenerateMatrixError):
            correlation_of(SpdMatrix([[0.0, 0.0], [0.0, 1.0]]), 0, 1)

    def test_same_index(self):
        with pytest.raises(DimensionError):
            correlation_of(SpdMatrix.identity(2), 1, 1)


class TestConditionalCov:
    def test_diagonal_unchanged(self):
        a = SpdMatrix(np.diag([1.0, 2.0, 3.0, 4.0]))
        np.testing.assert_array_equal(conditional_cov(a, [1, 3]).entries, np.diag([1.0, 3.0]))

    @pytest.mark.parametrize("rho", [-0.9, 0.0, 0.3, 0.99])
    def test_bivariate(self, rho):
        c = conditional_cov(SpdMatrix([[1.0, rho], [rho, 1.0]]), [0])
        assert c.entries[0, 0] == pytest.approx(1 - rho * rho, rel=1e-12)

    def test_against_brute_force_schur(self):
        rng = np.random.default_rng(2)
        subsets = [[0], [2], [0, 1], [1, 3], [0, 2, 3]]
        for _ in range(100):
            a = random_spd(rng, 4)
            for s in subsets:
                rest = [i for i in range(4) if i not in s]
                oracle = (a[np.ix_(rest, rest)]
                          - a[np.ix_(rest, s)] @ np.linalg.inv(a[np.ix_(s, s)]) @ a[np.ix_(s, rest)])
                np.testing.assert_allclose(conditional_cov(SpdMatrix(a), s).entries, oracle,
                                           rtol=1e-10, atol=1e-12)

    def test_preserves_positive_definiteness(self):
        rng = np.random.default_rng(3)
        for i in range(1000):
            p = 2 + i % 4
            a = random_spd(rng, p, 0.05, 5.0)
            s = sorted(rng.choice(p, size=rng.integers(1, p), replace=False).tolist())
            conditional_cov(SpdMatrix(a), s).chol

    @pytest.mark.parametrize("s", [[], [0, 1], [5]])
    def test_improper_subset(self, s):
        with pytest.raises(DimensionError):
            conditional_cov(SpdMatrix.identity(2), s)


class TestCovEstimate:
    def test_needs_enough_observations(self):
        with pytest.raises(DimensionError):
            CovEstimate(SpdMatrix.identity(3), 3, CovKind.PER_OBSERVATION)
        CovEstimate(SpdMatrix.identity(3), 3, CovKind.OF_ESTIMATOR)

    def test_estimator_cov(self):
        c = CovEstimate(SpdMatrix([[2.0, 0.0], [0.0, 4.0]]), 4)
        np.testing.assert_allclose(c.estimator_cov().entries, [[0.5, 0.0], [0.0, 1.0]])

    def test_sample_covariance_divisor(self):
        y = np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 4.0]])
        np.testing.assert_allclose(sample_covariance(y), np.cov(y.T, ddof=0))
        np.testing.assert_allclose(sample_covariance(y, ddof=1), np.cov(y.T))
