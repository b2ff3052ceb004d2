import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dpindirect import mechanisms as mech
from dpindirect.mechanisms import GDP, PURE_DP, PrivacyBudget, PrivacyBudgetError
from dpindirect.seedbank import SeedBank


def rng(seed=0):
    return SeedBank(seed).stream("test")


def hull_oracle(points):
    """Convex hull of {(t, t^2) : t in [0,1]} - the same set, via scipy."""
    from scipy.spatial import ConvexHull, Delaunay

    t = np.linspace(0.0, 1.0, 4001)
    curve = np.stack([t, t * t], 1)
    diffs = (curve[:, None, :] - curve[None, ::40, :]).reshape(-1, 2)
    hull = ConvexHull(diffs)
    return Delaunay(diffs[hull.vertices]).find_simplex(points) >= 0


class TestClamp:
    def test_hard(self):
        assert mech.clamp(5, 0, 3) == 3
        assert mech.clamp(-1, 0, 3) == 0
        assert mech.clamp(1.5, 0, 3) == 1.5

    def test_smooth_midpoints(self):
        assert mech.smooth_clamp(1.5, 0, 3, "sigmoid") == pytest.approx(1.5)
        assert mech.smooth_clamp(0.5, 0, 1, "smoothstep") == pytest.approx(0.5)

    def test_sigmoid_slope_at_center(self):
        h = 1e-6
        d = (mech.smooth_clamp(1.5 + h, 0, 3) - mech.smooth_clamp(1.5 - h, 0, 3)) / (2 * h)
        assert d == pytest.approx(1.0, rel=1e-6)

    @given(st.floats(-50, 50), st.sampled_from(["sigmoid", "smoothstep"]))
    def test_smooth_range(self, x, kind):
        v = mech.smooth_clamp(x, -1.0, 2.0, kind)
        assert -1.0 <= v <= 2.0

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            mech.clamp(0, 1, 0)


class TestAdditive:
    def test_laplace_scale(self):
        assert mech.laplace_scale(1, 1) == 1

    def test_zero_sensitivity_is_identity(self):
        assert mech.add_laplace(2.5, 0.0, 1.0, rng()) == 2.5
        assert mech.add_gaussian(2.5, 0.0, 1.0, rng()) == 2.5

    def test_laplace_variance(self):
        x = mech.add_laplace(np.zeros(100_000), 2.0, 1.0, rng(1))
        assert x.var() == pytest.approx(8.0, abs=0.4)

    def test_gaussian_sigma(self):
        assert mech.gaussian_sigma(1, 1) == 1
        assert mech.gaussian_sigma(3 / 100, 1) == pytest.approx(0.03)

    def test_gaussian_noise_vanishes(self):
        x = mech.add_gaussian(np.zeros(1000), 1.0, 1e12, rng(2))
        assert np.max(np.abs(x)) < 1e-10

    def test_bad_privacy_parameter(self):
        with pytest.raises(ValueError):
            mech.laplace_scale(1, 0)
        with pytest.raises(ValueError):
            mech.gaussian_sigma(1, -1)


class TestCompose:
    def test_gdp(self):
        b = mech.compose([PrivacyBudget(GDP, 1), PrivacyBudget(GDP, 1)])
        assert b.kind == GDP and b.value == math.sqrt(2)
        b = mech.compose([PrivacyBudget(GDP, 1 / math.sqrt(5))] * 5)
        assert b.value == pytest.approx(1.0, rel=1e-15)

    def test_pure(self):
        b = mech.compose([PrivacyBudget(PURE_DP, 0.9 * 10), PrivacyBudget(PURE_DP, 0.1 * 10)])
        assert b.kind == PURE_DP and b.value == 10.0

    def test_mixed_and_invalid(self):
        with pytest.raises(PrivacyBudgetError):
            mech.compose([PrivacyBudget(GDP, 1), PrivacyBudget(PURE_DP, 1)])
        with pytest.raises(PrivacyBudgetError):
            mech.compose([])
        with pytest.raises(PrivacyBudgetError):
            PrivacyBudget(GDP, 0)


class TestSampleLinf:
    def test_norm_bounded_by_radius(self):
        g = rng(3)
        for _ in range(200):
            v, r = mech.sample_linf(1.0, 3, g, return_radius=True)
            assert np.max(np.abs(v)) <= r

    def test_radial_mean(self):
        g = rng(4)
        r = np.array([mech.sample_linf(1.0, 2, g, return_radius=True)[1] for _ in range(100_000)])
        assert r.mean() == pytest.approx(3.0, abs=0.05)

    def test_linf_norm_law(self):
        # |V|_inf has density proportional to t^(m-1) exp(-c t): mean m / c
        g = rng(5)
        t = [np.max(np.abs(mech.sample_linf(2.0, 3, g))) for _ in range(40_000)]
        assert np.mean(t) == pytest.approx(1.5, rel=0.02)

    def test_scaling_in_c(self):
        g = rng(6)
        a = np.mean([np.max(np.abs(mech.sample_linf(1.0, 2, g))) for _ in range(20_000)])
        b = np.mean([np.max(np.abs(mech.sample_linf(100.0, 2, g))) for _ in range(20_000)])
        assert a / b == pytest.approx(100, rel=0.05)


class TestHull:
    def test_examples(self):
        assert mech.hull_contains([0.0, 0.25])
        assert not mech.hull_contains([0.0, 0.30])
        assert mech.hull_contains([1.0, 1.0])
        assert not mech.hull_contains([2.0, 0.0])

    def test_area_by_integration(self):
        # midpoint rule on the height of each vertical slice
        g = (np.arange(3000) + 0.5) / 3000 * 2 - 1
        U1, U2 = np.meshgrid(g, g)
        area = mech.hull_contains(np.stack([U1, U2], -1)).mean() * 4
        exact = integrate.quad(lambda u: -u * u - ((u + 1) ** 2 - 1), -1, -0.5)[0] * 2 + 0.5
        assert exact == pytest.approx(5 / 6, abs=1e-12)
        assert area == pytest.approx(exact, abs=2e-3)

    def test_matches_brute_force_oracle(self):
        g = np.linspace(-1.1, 1.1, 400)
        U1, U2 = np.meshgrid(g, g)
        pts = np.stack([U1.ravel(), U2.ravel()], 1)
        mine = mech.hull_contains(pts)
        ref = hull_oracle(pts)
        # distance to the hull boundary, for excluding the tie band
        u1, u2 = pts[:, 0], pts[:, 1]
        upper = np.where(u1 <= -0.5, -u1**2, np.where(u1 <= 0.5, u1 + 0.25, 1 - (u1 - 1) ** 2))
        lower = np.where(u1 <= -0.5, (u1 + 1) ** 2 - 1, np.where(u1 <= 0.5, u1 - 0.25, u1**2))
        band = (np.abs(u2 - upper) < 1e-9) | (np.abs(u2 - lower) < 1e-9) | (np.abs(np.abs(u1) - 1) < 1e-9)
        assert np.sum((mine != ref) & ~band) == 0

    def test_sensitivity_differences_inside(self):
        z = rng(7).random((5000, 2))
        diff = np.stack([z[:, 0] - z[:, 1], z[:, 0] ** 2 - z[:, 1] ** 2], 1)
        assert mech.hull_contains(diff).all()


class TestKNorm:
    def test_acceptance_rate(self):
        cand = rng(8).uniform(-1, 1, (100_000, 2))
        assert mech.hull_contains(cand).mean() == pytest.approx(5 / 24, abs=0.01)

    def test_noise_symmetric(self):
        g = rng(9)
        v = np.array([mech.knorm_noise(1.0, 1.0, 1.0, g) for _ in range(20_000)])
        se = v.std(axis=0) / np.sqrt(len(v))
        assert np.all(np.abs(v.mean(axis=0)) <= 3 * se)

    def test_large_eps_returns_value(self):
        out = mech.knorm_mechanism(np.array([10.0, 5.0]), 1e9, 1.0, 1.0, rng(10))
        assert out == pytest.approx([10.0, 5.0], abs=1e-6)

    def test_attempt_guard(self):
        with pytest.raises(mech.RejectionSamplingError):
            mech.knorm_noise(1.0, 1.0, 1.0, rng(11), max_attempts=0)


class TestObjectivePerturbation:
    def test_gamma(self):
        assert mech.objective_perturbation_gamma(1.0, 0.85, 0.5) == pytest.approx(3.08962, abs=1e-4)
        assert mech.objective_perturbation_gamma(1.0, 0.85, 0.5) == pytest.approx(0.5 / math.expm1(0.15))

    def test_gamma_vanishes(self):
        assert mech.objective_perturbation_gamma(200.0, 0.85, 0.5) < 1e-12

    def test_large_eps_gives_unpenalized_minimizer(self):
        def loss(th):
            return float(np.sum((th - 0.3) ** 2)), 2 * (th - 0.3)

        th, res = mech.objective_perturb(loss, 100, np.array([[-5.0, 5.0]] * 2), 1e6, 0.85, 0.5, 2.0, rng(12))
        assert res.converged
        assert th == pytest.approx([0.3, 0.3], abs=1e-5)


@settings(max_examples=50)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=6))
def test_compose_pure_is_sum(values):
    b = mech.compose([PrivacyBudget(PURE_DP, v) for v in values])
    assert b.value == math.fsum(values)
