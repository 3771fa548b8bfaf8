import math

import numpy as np
import pytest

from stochtrans import landscape, models


@pytest.fixture(scope="module")
def fhn01():
    return models.fhn(0.1)


class TestFindEquilibria:
    def test_fhn_three_points(self, fhn01):
        sp = landscape.find_equilibria(fhn01, ((-2.0, 2.0), (-2.0, 2.0)))
        assert len(sp.attractors) == 2 and len(sp.saddles) == 1 and not sp.repellers
        assert "R" in sp.attractors and "L" in sp.attractors and "M" in sp.saddles
        assert np.allclose(sp.saddles["M"], 0.0, atol=1e-8)

    def test_comp_nine_points(self):
        sp = landscape.find_equilibria(models.comp(), ((-0.1, 1.2), (-0.1, 1.2)), 60)
        assert len(sp.attractors) == 4
        assert len(sp.saddles) == 4
        assert len(sp.repellers) == 1

    def test_double_well_2d(self):
        sp = landscape.find_equilibria(models.double_well_2d(), ((-2.0, 2.0), (-1.0, 1.0)))
        mins = sorted(tuple(np.round(p, 8)) for p in sp.attractors.values())
        assert mins == [(-1.0, 0.0), (1.0, 0.0)]
        assert np.allclose(list(sp.saddles.values())[0], 0.0, atol=1e-9)


class TestSaddleAnalysis:
    def test_fhn_eps_0p1(self, fhn01):
        sa = landscape.saddle_analysis(fhn01, np.zeros(2))
        assert np.allclose(fhn01.jacobian(np.zeros(2)), [[10.0, -10.0], [1.0, -3.0]])
        rt = math.sqrt(129.0)
        assert sa.lambda_plus == pytest.approx((7 + rt) / 2, abs=1e-12)
        assert sa.lambda_minus == pytest.approx((7 - rt) / 2, abs=1e-12)
        assert sa.mu == pytest.approx(0.23736, abs=1e-4)
        assert sa.divergence_at_saddle == pytest.approx(7.0)

    def test_fhn_eps_0p01_matches_2eps(self):
        sa = landscape.saddle_analysis(models.fhn(0.01), np.zeros(2))
        assert sa.mu == pytest.approx(0.02040, abs=1e-4)
        assert sa.mu == pytest.approx(2 * 0.01, rel=0.02)

    def test_fhn_eps_10(self):
        sa = landscape.saddle_analysis(models.fhn(10.0), np.zeros(2))
        assert sa.mu == pytest.approx(44.0, abs=0.5)
        assert sa.mu > 1

    def test_eigen_identities(self, fhn01):
        sa = landscape.saddle_analysis(fhn01, np.zeros(2))
        j = fhn01.jacobian(np.zeros(2))
        assert sa.lambda_minus + sa.lambda_plus == pytest.approx(np.trace(j), abs=1e-10)
        assert sa.lambda_minus * sa.lambda_plus == pytest.approx(np.linalg.det(j), abs=1e-10)
        assert sa.mu > 0
        # eigenvectors against a generic solver
        ev, vecs = np.linalg.eig(j)
        for lam, vec in ((sa.lambda_minus, sa.vec_minus), (sa.lambda_plus, sa.vec_plus)):
            k = int(np.argmin(np.abs(ev - lam)))
            ref = np.real(vecs[:, k])
            assert abs(abs(ref @ vec) - 1.0) < 1e-10

    def test_non_saddle_rejected(self, fhn01):
        with pytest.raises(ValueError, match="not a saddle"):
            landscape.saddle_analysis(fhn01, fhn01.special_points.attractors["R"])

    def test_mu_crosses_one_at_inverse_beta(self):
        beta = 3.0
        mus = {}
        for eps in (0.30, 0.325, 1 / 3, 0.345, 0.37, 1.0, 4.0):
            mus[eps] = landscape.saddle_analysis(models.fhn(eps, beta), np.zeros(2)).mu
        vals = [mus[e] for e in sorted(mus)]
        assert all(a < b for a, b in zip(vals, vals[1:]))  # monotone in epsilon
        assert mus[0.325] < 1 < mus[0.345]
        assert mus[1 / 3] == pytest.approx(1.0, abs=1e-12)

    def test_positive_divergence_iff_mu_below_one(self):
        for eps in (0.05, 0.2, 0.32, 0.34, 0.6, 2.0, 10.0):
            m = models.fhn(eps)
            sa = landscape.saddle_analysis(m, np.zeros(2))
            assert (sa.divergence_at_saddle > 0) == (sa.mu < 1)


class TestBasinBoundary:
    def test_double_well_boundary_is_vertical_axis(self):
        m = models.double_well_2d()
        poly = landscape.basin_boundary(m, np.zeros(2), half_length=0.8)
        assert np.max(np.abs(poly.points[:, 0])) < 1e-6
        assert poly.arclength[poly.saddle_index] == 0.0

    def test_fhn_tangent_at_saddle(self, fhn01):
        sa = landscape.saddle_analysis(fhn01, np.zeros(2))
        poly = landscape.basin_boundary(fhn01, np.zeros(2), half_length=0.6)
        t = poly.tangent_at_saddle()
        assert abs(abs(t @ sa.vec_minus) - 1.0) < 1e-6
        d = np.linalg.norm(poly.points - 0.0, axis=1)
        assert d[poly.saddle_index] < 1e-12

    def test_points_separate_basins(self, fhn01):
        poly = landscape.basin_boundary(fhn01, np.zeros(2), half_length=0.5)
        idx = [poly.saddle_index - 100, poly.saddle_index + 40, poly.saddle_index + 180]
        for i in idx:
            p = poly.points[i]
            t = poly.points[i + 1] - poly.points[i - 1]
            n = np.array([-t[1], t[0]])
            n /= np.linalg.norm(n)
            a = landscape.classify_basin(fhn01, p + 1e-4 * n)
            b = landscape.classify_basin(fhn01, p - 1e-4 * n)
            assert {a, b} == {"R", "L"}

    def test_refinement_invariance(self, fhn01):
        p1 = landscape.basin_boundary(fhn01, np.zeros(2), half_length=0.4, step=2e-3)
        p2 = landscape.basin_boundary(fhn01, np.zeros(2), half_length=0.4, step=1e-3)
        # compare at the coarse polyline's arclengths
        for k in range(2):
            interp = np.interp(p1.arclength, p2.arclength, p2.points[:, k])
            assert np.max(np.abs(interp - p1.points[:, k])) < 1e-6

    def test_monotone_arclength_required(self):
        with pytest.raises(ValueError):
            landscape.BoundaryPolyline(
                points=np.zeros((3, 2)),
                arclength=np.array([0.0, 0.0, 1.0]),
                saddle_index=0,
            )


class TestClassifyBasin:
    def test_attractor_neighborhood_immediate(self, fhn01):
        x_r = fhn01.special_points.attractors["R"]
        assert landscape.classify_basin(fhn01, x_r) == "R"

    def test_interior_point(self, fhn01):
        assert landscape.classify_basin(fhn01, np.array([0.5, 0.0])) == "R"

    def test_odd_symmetry(self, fhn01):
        rng = np.random.default_rng(1)
        for _ in range(5):
            x = rng.uniform(-1.0, 1.0, 2)
            a = landscape.classify_basin(fhn01, x)
            b = landscape.classify_basin(fhn01, -x)
            if landscape.UNCLASSIFIED in (a, b):
                continue
            assert {a, b} == {"R", "L"}


class TestCriticalManifold:
    def test_fold_points(self):
        cm = landscape.critical_manifold_fhn()
        assert cm["fold_v"][1] == pytest.approx(math.sqrt(4 / 27), abs=1e-12)
        assert cm["fold_v"][1] == pytest.approx(0.38490, abs=1e-5)

    def test_origin_on_unstable_branch(self):
        cm = landscape.critical_manifold_fhn(samples=1001)
        i = int(np.argmin(np.abs(cm["u"])))
        assert not cm["stable"][i]

    def test_right_attractor_on_stable_branch(self):
        u_r = math.sqrt(2 / 3)
        assert -(u_r**3) + u_r == pytest.approx(math.sqrt(2 / 27), abs=1e-12)
        cm = landscape.critical_manifold_fhn()
        i = int(np.argmin(np.abs(cm["u"] - u_r)))
        assert cm["stable"][i]

    def test_curve_lies_on_nullcline(self):
        cm = landscape.critical_manifold_fhn(v_range=(-0.5, 0.5), samples=100)
        assert np.allclose(cm["v"], -cm["u"] ** 3 + cm["u"], atol=1e-12)
        assert cm["v"].min() <= -0.5 + 1e-9 and cm["v"].max() >= 0.5 - 1e-9
