import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_projection_oracle, random_spd
from onesided.cone import KKT_TOL, batch_distance_2d, project_nonpositive, t_statistic
from onesided.errors import DegenerateMatrixError, DimensionError
from onesided.linalg import CovEstimate, CovKind, SpdMatrix

coords = st.floats(-3, 3, allow_nan=False)


@st.composite
def problems(draw, p=None):
    p = p or draw(st.integers(1, 4))
    x = np.array(draw(st.lists(coords, min_size=p, max_size=p)))
    seed = draw(st.integers(0, 2**32 - 1))
    return x, SpdMatrix(random_spd(np.random.default_rng(seed), p))


class TestProjection:
    def test_point_in_cone(self):
        x = np.array([-1.0, -2.0])
        res = project_nonpositive(x, SpdMatrix([[2.0, 0.7], [0.7, 1.0]]))
        np.testing.assert_array_equal(res.mu0, x)
        assert res.distance_sq == 0.0
        assert res.active_set == ()

    def test_published_main(self):
        res = project_nonpositive(np.array([0.69, 1.53]), SpdMatrix([[0.01282, 0.01586], [0.01586, 0.04022]]))
        np.testing.assert_array_equal(res.mu0, [0.0, 0.0])
        assert res.active_set == (0, 1)
        assert res.distance_sq == pytest.approx(59.33, abs=0.02)

    def test_published_inflated(self):
        # hand KKT solve: with mu_1 = 0 the free coordinate is
        # x_2 - (s12 / s11) x_1 = 0.009 - (0.0156 / 0.0081) 0.166 and the distance x_1^2 / s11
        res = project_nonpositive(np.array([0.166, 0.009]), SpdMatrix([[0.0081, 0.0156], [0.0156, 0.0545]]))
        assert res.active_set == (0,)
        assert res.mu0[0] == 0.0
        assert res.mu0[1] == pytest.approx(0.009 - 0.0156 / 0.0081 * 0.166, rel=1e-12)
        assert res.mu0[1] == pytest.approx(-0.3107, abs=1e-4)
        assert res.distance_sq == pytest.approx(0.166**2 / 0.0081, rel=1e-12)

    def test_degenerate_metric(self):
        with pytest.raises(DegenerateMatrixError):
            project_nonpositive(np.array([1.0, 1.0]), SpdMatrix([[1.0, 1.0], [1.0, 1.0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            project_nonpositive(np.array([1.0, 1.0, 1.0]), SpdMatrix.identity(2))

    @pytest.mark.parametrize("p,count", [(1, 20), (2, 40), (3, 20)])
    def test_grid_oracle_sample(self, p, count):
        # the full 1,000-instance sweep lives in the acceptance suite
        rng = np.random.default_rng(50 + p)
        for _ in range(count):
            x = rng.uniform(-1, 1, p)
            a = random_spd(rng, p, 0.2, 2.0)
            res = project_nonpositive(x, SpdMatrix(a))
            g = grid_projection_oracle(x, a)
            assert res.distance_sq <= g + 1e-12
            assert g - res.distance_sq <= 1e-8 * (1 + res.distance_sq)

    @settings(max_examples=300, deadline=None)
    @given(problems())
    def test_feasible_and_kkt(self, prob):
        x, m = prob
        res = project_nonpositive(x, m)
        assert np.all(res.mu0 <= 0)
        lam = m.solve(x - res.mu0)
        # multipliers vanish off the active set and are non-negative on it
        free = [i for i in range(len(x)) if i not in res.active_set]
        np.testing.assert_allclose(lam[free], 0, atol=1e-8 * (1 + np.abs(lam).max()))
        assert np.all(lam[list(res.active_set)] >= -1e-8 * (1 + np.abs(lam).max()))

    @settings(max_examples=200, deadline=None)
    @given(problems())
    def test_idempotent(self, prob):
        x, m = prob
        once = project_nonpositive(x, m).mu0
        twice = project_nonpositive(once, m)
        np.testing.assert_array_equal(twice.mu0, once)
        assert twice.distance_sq == 0.0

    @settings(max_examples=200, deadline=None)
    @given(problems(), st.floats(0.01, 100))
    def test_scale_equivariant(self, prob, c):
        x, m = prob
        a = project_nonpositive(x, m).mu0
        b = project_nonpositive(c * x, m).mu0
        # active-set selection uses an absolute KKT tolerance, so agreement is to that scale
        np.testing.assert_allclose(b, c * a, rtol=1e-8, atol=1e-8 * max(c, 1.0))

    @settings(max_examples=200, deadline=None)
    @given(problems())
    def test_zero_iff_in_cone(self, prob):
        x, m = prob
        d = project_nonpositive(x, m).distance_sq
        if np.all(x <= 0):
            assert d == 0.0
        elif np.any(x > KKT_TOL):
            assert d > 0.0


class TestBatchKernel:
    def test_matches_scalar_projection(self):
        rng = np.random.default_rng(7)
        xs = rng.uniform(-1, 1, (2000, 2))
        ss = np.array([random_spd(rng, 2, 0.05, 3) for _ in range(2000)])
        dist, full = batch_distance_2d(xs, ss)
        for i in range(2000):
            m = SpdMatrix(ss[i])
            assert dist[i] == pytest.approx(project_nonpositive(xs[i], m).distance_sq, rel=1e-10, abs=1e-14)
            assert full[i] == pytest.approx(xs[i] @ np.linalg.solve(ss[i], xs[i]), rel=1e-10)


class TestStatistic:
    def test_in_cone(self):
        ts = t_statistic(np.array([-0.5, -0.1]), CovEstimate(SpdMatrix.identity(2), 10))
        assert ts.t_n == 0.0 and ts.r_n == 0.0

    def test_published_main(self, mor_main):
        ts = t_statistic(*mor_main)
        assert ts.t_n == pytest.approx(59.33, abs=0.02)
        assert ts.rho_hat == pytest.approx(0.6985, abs=1e-4)

    def test_published_inflated(self, mor_inflated):
        ts = t_statistic(*mor_inflated)
        assert ts.t_n == pytest.approx(3.40, abs=0.005)

    def test_per_observation_scaling(self):
        s = SpdMatrix([[1.0, 0.3], [0.3, 2.0]])
        x = np.array([0.4, -0.2])
        a = t_statistic(x, CovEstimate(s, 50, CovKind.PER_OBSERVATION))
        b = t_statistic(x, CovEstimate(s.scaled(1 / 50), 50, CovKind.OF_ESTIMATOR))
        assert a.t_n == pytest.approx(b.t_n, rel=1e-12)
        assert a.r_n == pytest.approx(50 * np.log1p(a.t_n / 50), rel=1e-14)
        assert a.r_n < a.t_n

    def test_rho_shapes(self):
        assert np.isnan(t_statistic(np.array([1.0]), CovEstimate(SpdMatrix.identity(1), 5)).rho_hat)
        r = t_statistic(np.ones(3), CovEstimate(SpdMatrix.identity(3), 5)).rho_hat
        np.testing.assert_array_equal(r, np.eye(3))
