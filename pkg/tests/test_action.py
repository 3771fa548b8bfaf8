import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from stochtrans import models
from stochtrans.action import (
    ActionValue,
    DiscretePath,
    fw_action,
    geometric_action,
    om_action,
    path_arclength,
    resample_path,
)


def null_model(dim=1):
    """b = 0 with identity covariance, for quadrature sanity checks."""
    return models.ModelSpec(
        name="null",
        dimension=dim,
        params={},
        drift=lambda x: np.zeros_like(x),
        jacobian=lambda x: np.zeros(x.shape[:-1] + (dim, dim)),
        divergence=lambda x: np.zeros(x.shape[:-1]),
        div_grad=lambda x: np.zeros_like(x),
    )


def heteroclinic_dw1d(n=200, delta=1e-4):
    """Uphill path of the 1-D double well from -1 to 0 (reversed relaxation)."""
    sol = solve_ivp(
        lambda _t, x: x**3 - x,
        (0.0, 60.0),
        [-1.0 + delta],
        rtol=1e-12,
        atol=1e-14,
        dense_output=True,
        events=lambda _t, x: x[0] + delta,
    )
    t_end = sol.t_events[0][0]
    tt = np.linspace(0.0, t_end, n)
    return DiscretePath(points=sol.sol(tt).T, times=tt)


class TestPathType:
    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            DiscretePath(points=np.zeros((1, 2)))

    def test_times_strictly_increasing(self):
        with pytest.raises(ValueError):
            DiscretePath(points=np.zeros((3, 1)), times=np.array([0.0, 1.0, 1.0]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            DiscretePath(points=np.array([[0.0], [np.nan]]))

    def test_resample_uniform_arclength(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]])
        out = resample_path(pts, 7)
        seg = np.linalg.norm(np.diff(out, axis=0), axis=1)
        assert np.allclose(seg, seg[0])
        assert np.allclose(out[0], pts[0]) and np.allclose(out[-1], pts[-1])
        assert path_arclength(out)[-1] == pytest.approx(3.0, rel=1e-12)


class TestFwAction:
    def test_straight_path_zero_drift(self):
        t = np.linspace(0.0, 1.0, 101)
        path = DiscretePath(points=t[:, None], times=t)
        av = fw_action(path, null_model())
        assert av.total == pytest.approx(0.5, rel=1e-12)
        assert av.divergence_correction == 0.0

    def test_flow_segment_action_vanishes_quadratically(self):
        m = models.double_well_2d()
        sol = solve_ivp(
            lambda _t, x: m.drift(x), (0.0, 6.0), [0.5, 0.3],
            rtol=1e-12, atol=1e-14, dense_output=True,
        )
        vals = []
        for n in (100, 200, 400):
            tt = np.linspace(0.0, 6.0, n)
            av = fw_action(DiscretePath(points=sol.sol(tt).T, times=tt), m)
            assert av.fw_part >= 0
            vals.append(av.total)
        # O(dt^2): quartering under doubling of resolution
        assert vals[1] < 0.3 * vals[0]
        assert vals[2] < 0.3 * vals[1]

    def test_dw1d_heteroclinic_matches_barrier(self):
        path = heteroclinic_dw1d(200)
        av = fw_action(path, models.double_well_1d())
        assert av.total == pytest.approx(0.5, rel=0.01)

    def test_singular_covariance_reports_point(self):
        m = models.comp()
        pts = np.array([[0.5, 0.0], [0.25, 0.0], [0.5, 0.4]])
        path = DiscretePath(points=pts, times=np.array([0.0, 1.0, 2.0]))
        with pytest.raises(models.SingularNoiseError, match="midpoint"):
            fw_action(path, m)

    def test_decomposition_identity(self):
        m = models.fhn(0.2)
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(40, 2)) * 0.3
        path = DiscretePath(points=pts, times=np.linspace(0, 2, 40))
        av = om_action(path, m, sigma=0.4)
        assert av.total == pytest.approx(av.fw_part + av.divergence_correction, abs=1e-12)


class TestOmAction:
    def test_divergence_free_equals_fw(self):
        m = models.rotation()
        t = np.linspace(0, 1, 50)
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
        path = DiscretePath(points=pts, times=t)
        assert om_action(path, m, 0.7).total == fw_action(path, m).total

    def test_correction_scales_quadratically(self):
        m = models.fhn(0.1)
        t = np.linspace(0, 1, 30)
        pts = np.stack([0.5 * t, 0.1 * t], axis=1)
        path = DiscretePath(points=pts, times=t)
        c1 = om_action(path, m, 0.2).divergence_correction
        c2 = om_action(path, m, 0.1).divergence_correction
        assert c1 / c2 == pytest.approx(4.0, abs=1e-6)

    def test_saddle_sitting_path(self):
        # stationary at the saddle: fw part 0, correction sigma^2/2 * 7 * T
        m = models.fhn(0.1, 3.0)
        T, sigma = 2.5, 0.3
        path = DiscretePath(points=np.zeros((60, 2)), times=np.linspace(0, T, 60))
        av = om_action(path, m, sigma)
        assert av.fw_part == pytest.approx(0.0, abs=1e-15)
        assert av.total == pytest.approx(3.5 * sigma**2 * T, rel=1e-12)


class TestGeometricAction:
    def test_flow_line_along_flow_is_zero(self):
        m = models.double_well_2d()
        sol = solve_ivp(
            lambda _t, x: m.drift(x), (0.0, 8.0), [0.4, 0.5],
            rtol=1e-12, atol=1e-14, dense_output=True,
        )
        pts = sol.sol(np.linspace(0, 8, 400)).T
        val = geometric_action(DiscretePath(points=pts), m)
        assert 0 <= val < 2e-5

    def test_dw1d_heteroclinic_geometric(self):
        pts = np.linspace(-1.0 + 1e-6, 0.0, 200)[:, None]
        val = geometric_action(DiscretePath(points=pts), models.double_well_1d())
        assert val == pytest.approx(0.5, rel=0.01)

    def test_zero_length_segment_rejected(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError, match="zero-length"):
            geometric_action(DiscretePath(points=pts), models.rotation())

    def test_lower_bound_for_timed_realizations(self):
        m = models.fhn(0.5)
        rng = np.random.default_rng(11)
        pts = np.cumsum(rng.normal(size=(30, 2)) * 0.05, axis=0)
        geo = geometric_action(DiscretePath(points=pts), m)
        for speed in (0.3, 1.0, 3.0):
            t = path_arclength(pts) / speed
            timed = DiscretePath(points=pts, times=t)
            assert geo <= fw_action(timed, m).total + 1e-9


class TestInvariants:
    @given(c=st.floats(min_value=0.05, max_value=20.0))
    @settings(max_examples=25, deadline=None)
    def test_q_scaling(self, c):
        # Q = c I scales the action by 1/c exactly
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(25, 2))
        t = np.linspace(0, 1, 25)
        path = DiscretePath(points=pts, times=t)
        base = fw_action(path, models.linear(q_diag=(1.0, 1.0))).total
        scaled = fw_action(path, models.linear(q_diag=(c, c))).total
        assert scaled == pytest.approx(base / c, rel=1e-10)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_geometric_action_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.cumsum(rng.normal(size=(20, 2)) * 0.1, axis=0)
        assert geometric_action(DiscretePath(points=pts), models.fhn(0.3)) >= 0

    def test_refinement_order_at_least_1p8(self):
        m = models.fhn(0.5)

        def action_at(n):
            t = np.linspace(0.0, 2.0, n)
            pts = np.stack([np.sin(t), 0.3 * np.cos(1.7 * t)], axis=1)
            return fw_action(DiscretePath(points=pts, times=t), m).total

        s1, s2, s3 = action_at(100), action_at(200), action_at(400)
        order = math.log2(abs(s1 - s2) / abs(s2 - s3))
        assert order >= 1.8

    def test_action_value_frozen(self):
        av = ActionValue(total=1.0, fw_part=1.0, divergence_correction=0.0)
        with pytest.raises(AttributeError):
            av.total = 2.0
