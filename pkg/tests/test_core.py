import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_array_equal, assert_allclose

from wiorbo.core import IterateBO, OracleCounters, ProblemMeta, RateConfig, plan_epoch, project_ball
from wiorbo.errors import CorruptStateError, EpochTooLongError, InvalidDatasetError

finite_vecs = arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e6, 1e6, allow_nan=False))
radii = st.floats(1e-3, 1e3)


class TestProjectBall:
    def test_zero_vector_is_fixed(self):
        assert_array_equal(project_ball(np.zeros(2), 1.0), [0.0, 0.0])

    def test_inside_ball_is_identity(self):
        assert_array_equal(project_ball(np.array([3.0, 4.0]), 5.0), [3.0, 4.0])

    def test_outside_ball_is_scaled(self):
        assert_allclose(project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], rtol=1e-15)

    def test_rejects_non_finite(self):
        with pytest.raises(CorruptStateError):
            project_ball(np.array([np.nan, 1.0]), 1.0)

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            project_ball(np.ones(2), 0.0)

    @given(finite_vecs, radii)
    def test_idempotent(self, u, iota):
        once = project_ball(u, iota)
        assert_array_equal(project_ball(once, iota), once)

    @given(finite_vecs, radii)
    def test_norm_bounds(self, u, iota):
        out = project_ball(u, iota)
        assert np.linalg.norm(out) <= iota
        assert np.linalg.norm(out) <= np.linalg.norm(u)


class TestPlanEpoch:
    @pytest.mark.parametrize("m,n,length,outer,inner", [(2, 3, 6, 3, 2), (4, 6, 12, 3, 2), (5, 5, 5, 1, 1)])
    def test_examples(self, m, n, length, outer, inner):
        plan = plan_epoch(m, n)
        assert (plan.epoch_len, plan.outer_reps, plan.inner_reps) == (length, outer, inner)

    def test_exhaustive_small_range(self):
        for m in range(1, 65):
            for n in range(1, 65):
                plan = plan_epoch(m, n)
                assert plan.epoch_len % m == 0 and plan.epoch_len % n == 0
                assert plan.outer_reps * m == plan.inner_reps * n == plan.epoch_len

    @pytest.mark.parametrize("m,n", [(0, 3), (3, 0)])
    def test_empty_dataset(self, m, n):
        with pytest.raises(InvalidDatasetError):
            plan_epoch(m, n)

    def test_cap(self):
        with pytest.raises(EpochTooLongError):
            plan_epoch(999_983, 999_979)
        assert plan_epoch(6, 10, cap=30).epoch_len == 30


class TestRateConfig:
    def test_ratio_mode_exact(self):
        r = RateConfig.from_ratios(0.01, 3.0, 7.0)
        assert r.gamma == 3.0 * 0.01 and r.rho == 7.0 * 0.01

    @pytest.mark.parametrize("kw", [dict(eta=-1.0), dict(gamma=float("nan")), dict(rho=float("inf"))])
    def test_rejects_bad_rates(self, kw):
        base = dict(eta=0.1, gamma=0.1, rho=0.1) | kw
        with pytest.raises(ValueError):
            RateConfig(**base)

    def test_decay_schedule(self):
        r = RateConfig(1.0, 2.0, 4.0, decay=0.5)
        assert r.at_epoch(0) == (1.0, 2.0, 4.0)
        assert_allclose(r.at_epoch(2), (0.5, 1.0, 2.0))

    def test_iota_default_from_meta(self):
        meta = ProblemMeta(mu=2.0, L=10.0, C_f=3.0)
        assert RateConfig(0.1, 0.1, 0.1).resolve_iota(meta) == 1.5
        assert RateConfig(0.1, 0.1, 0.1, iota=4.0).resolve_iota(meta) == 4.0


class TestMetaAndState:
    def test_kappa(self):
        assert ProblemMeta(mu=0.5, L=4.0, C_f=1.0).kappa == 8.0

    def test_mu_above_L_rejected(self):
        with pytest.raises(ValueError):
            ProblemMeta(mu=5.0, L=1.0, C_f=1.0)

    def test_iterate_finite_check(self):
        s = IterateBO.zeros(2, 3)
        s.check_finite()
        s.y[1] = np.inf
        with pytest.raises(CorruptStateError):
            s.check_finite()

    def test_iterate_shape_mismatch(self):
        with pytest.raises(ValueError):
            IterateBO(np.zeros(2), np.zeros(3), np.zeros(2))

    def test_counters_monotone(self):
        c = OracleCounters()
        c.add("gc_f", 2)
        c.merge(OracleCounters(gc_g=3))
        assert c.snapshot() == {"gc_f": 2, "gc_g": 3, "jv_g": 0, "hv_g": 0}
        with pytest.raises(ValueError):
            c.add("hv_g", -1)
