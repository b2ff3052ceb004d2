import numpy as np
import pytest

from dpindirect.indirect import (
    ADI,
    IND,
    EstimationError,
    EstimatorOptions,
    SynthEnsemble,
    adi_objective,
    approx_pivot_sd,
    boundary_mask,
    ensemble_moments,
    estimate,
    ind_objective,
    start_points,
    whitened_residuals,
)
from dpindirect.models import GaussianShiftModel, LocScaleConfig, LocScaleModel, Seeds
from dpindirect.seedbank import SeedBank


class FixedEnsemble:
    """Stand-in ensemble whose releases do not depend on theta."""

    def __init__(self, sims):
        self.sims = np.asarray(sims, dtype=float)

    def moments(self, thetas, need_cov=True):
        k = np.atleast_2d(thetas).shape[0]
        m = self.sims.mean(axis=0)
        c = self.sims - m
        S = c.T @ c / (len(self.sims) - 1)
        return np.repeat(m[None], k, 0), np.repeat(S[None], k, 0) if need_cov else None


class TestMoments:
    def test_identical_members(self):
        m = GaussianShiftModel(n=100, sigma=0.0)
        E = SynthEnsemble.from_bank(m, SeedBank(1), 5)
        mean, S = ensemble_moments(E, [0.3, 0.1])
        assert mean == pytest.approx([0.3, 0.1])
        assert np.all(S == 0)

    def test_hand_example(self):
        m = GaussianShiftModel(n=1, sigma=1.0)
        E = SynthEnsemble(m, Seeds(np.array([[0.0, 0.0], [2.0, 0.0]]), np.zeros((2, 0))))
        mean, S = ensemble_moments(E, [0.0, 0.0])
        assert mean == pytest.approx([1, 0])
        assert S == pytest.approx(np.array([[2, 0], [0, 0]]))

    def test_mean_is_average(self):
        m = LocScaleModel()
        E = SynthEnsemble.from_bank(m, SeedBank(2), 30)
        sims = E.evaluate([[1.0, 1.0]])[0]
        mean, S = ensemble_moments(E, [1.0, 1.0])
        assert np.max(np.abs(mean - sims.sum(axis=0) / 30)) < 1e-14
        assert S == pytest.approx(np.cov(sims, rowvar=False), abs=1e-14)


class TestObjectives:
    def test_ind_values(self):
        E = FixedEnsemble([[1.0, 1.0], [1.0, 1.0]])
        assert ind_objective([1.0, 1.0], E, [0, 0]) == 0
        assert ind_objective([4.0, 5.0], E, [0, 0]) == pytest.approx(25)
        assert ind_objective([4.0, 5.0], E, [0, 0], omega=2 * np.eye(2)) == pytest.approx(50)

    def test_adi_isotropic(self):
        E = FixedEnsemble([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        s = np.array([0.3, -0.4])
        sigma2 = 2 / 3
        assert adi_objective(s, E, [0, 0], ridge=0.0) == pytest.approx(0.25 / sigma2)
        assert adi_objective(s, E, [0, 0], ridge=0.1) == pytest.approx(0.25 / (sigma2 + 0.1))

    def test_adi_equals_ind_with_inverse_covariance(self):
        m = LocScaleModel()
        E = SynthEnsemble.from_bank(m, SeedBank(3), 20)
        s = np.array([1.1, 0.8])
        for th in ([1.0, 1.0], [0.7, 1.4]):
            _, S = ensemble_moments(E, th)
            ref = ind_objective(s, E, th, omega=np.linalg.inv(S))
            assert adi_objective(s, E, th, ridge=0.0) == pytest.approx(ref, rel=1e-10)

    def test_degenerate_covariance(self):
        E = FixedEnsemble([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(EstimationError):
            whitened_residuals([1.0, 1.0], E, [0, 0], ADI)

    def test_bad_weight_matrix(self):
        E = FixedEnsemble([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            ind_objective([0, 0], E, [0, 0], omega=np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            ind_objective([0, 0], E, [0, 0], omega=-np.eye(2))


class TestEstimate:
    def test_seed_match_recovery(self):
        m = LocScaleModel(LocScaleConfig(L=-10, U=10))
        E = SynthEnsemble.from_bank(m, SeedBank(4), 1)
        s = E.evaluate([[1.0, 1.0]])[0, 0]
        res = estimate(s, m, mode=IND, ensemble=E)
        assert res.objective_value < 1e-10
        assert np.max(np.abs(res.theta_hat - 1.0)) < 1e-4

    def test_omega_scaling_invariance(self):
        A = np.array([[1.0, 0.5], [0.2, 1.0], [0.3, -0.4]])
        m = GaussianShiftModel(A, n=50)
        E = SynthEnsemble.from_bank(m, SeedBank(5), 40)
        s = np.array([0.4, -0.1, 0.6])
        W = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]])
        a = estimate(s, m, mode=IND, ensemble=E, omega=W).theta_hat
        b = estimate(s, m, mode=IND, ensemble=E, omega=7.5 * W).theta_hat
        assert np.max(np.abs(a - b)) < 1e-4

    def test_identity_model_gap(self):
        m = GaussianShiftModel(n=10_000)
        s = np.array([0.3, -0.7])
        E = SynthEnsemble.from_bank(m, SeedBank(6), 500)
        res = estimate(s, m, mode=ADI, ensemble=E)
        assert np.max(np.abs(res.theta_hat - s)) <= 1e-3

    def test_identity_model_gap_shrinks_with_R(self):
        m = GaussianShiftModel(n=100)
        s = np.array([0.3, -0.7])
        gaps = []
        for R in (20, 2000):
            g = [np.max(np.abs(estimate(s, m, SeedBank(7), R=R, key=(k,)).theta_hat - s)) for k in range(10)]
            gaps.append(np.mean(g))
        assert gaps[1] < gaps[0] / 4

    @pytest.mark.parametrize("solver", ["gauss-newton", "trf", "lbfgsb"])
    def test_solvers_agree(self, solver):
        m = LocScaleModel()
        E = SynthEnsemble.from_bank(m, SeedBank(8), 50)
        s = np.array([0.95, 0.7])
        ref = estimate(s, m, ensemble=E).theta_hat
        res = estimate(s, m, ensemble=E, opts=EstimatorOptions(solver=solver))
        assert res.theta_hat == pytest.approx(ref, abs=1e-5)

    def test_rejects_bad_input(self):
        m = LocScaleModel()
        with pytest.raises(ValueError):
            estimate([np.nan, 1.0], m, SeedBank(1))
        with pytest.raises(ValueError):
            estimate([1.0, 1.0], m)
        with pytest.raises(ValueError):
            EstimatorOptions(solver="newton")

    def test_start_points_are_distinct_and_in_box(self):
        m = LocScaleModel()
        pts = start_points(m, np.array([1.0, 1.0]), EstimatorOptions(), x0=[1.0, 1.0])
        assert len({p.tobytes() for p in pts}) == len(pts)
        for p in pts:
            assert np.all(p >= m.theta_box[:, 0]) and np.all(p <= m.theta_box[:, 1])

    def test_boundary_mask(self):
        box = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert list(boundary_mask(np.array([0.0, 0.5]), box)) == [True, False]
        assert list(boundary_mask(np.array([0.9995, 0.99]), box)) == [True, False]

    def test_sqrt_n_consistency(self):
        rmse = {}
        for n in (100, 400, 1600):
            m = LocScaleModel(LocScaleConfig(n=n))
            bank = SeedBank(9)
            err = []
            for rid in range(60):
                s = m.sample_statistic([1.0, 1.0], bank.stream("data", (rid,)), bank.stream("dp", (rid,)))
                err.append(estimate(s, m, bank, R=50, key=(rid,)).theta_hat - 1.0)
            rmse[n] = np.sqrt(np.mean(np.square(err), axis=0))
        scaled = {n: rmse[n] * np.sqrt(n) for n in rmse}
        assert np.all(rmse[100] > rmse[400]) and np.all(rmse[400] > rmse[1600])
        ratio = scaled[1600] / scaled[100]
        assert np.all((ratio > 0.6) & (ratio < 1.6))


class TestPivot:
    def test_linear_map_jacobian(self):
        A = np.array([[2.0, 0.5], [-0.3, 1.5], [1.0, 1.0]])
        m = GaussianShiftModel(A, n=100)
        E = SynthEnsemble.from_bank(m, SeedBank(10), 300, tag="pivot")
        sd, B, Sigma, V = approx_pivot_sd([0.2, -0.1], m, ensemble=E, full=True)
        assert np.max(np.abs(B - A)) <= 1e-3

    def test_identity_model_scale(self):
        m = GaussianShiftModel(n=400, sigma=2.0)
        E = SynthEnsemble.from_bank(m, SeedBank(11), 2000, tag="pivot")
        sd, B, _, _ = approx_pivot_sd([0.5, 0.5], m, ensemble=E, full=True)
        assert np.max(np.abs(B - np.eye(2))) <= 1e-3
        assert sd == pytest.approx(2.0 / np.sqrt(400), rel=0.05)

    def test_step_turns_inward_at_bound(self):
        m = LocScaleModel(LocScaleConfig(L=-20, U=20))
        sd = approx_pivot_sd([10.0, 1.0], m, SeedBank(12), R_big=50)
        assert np.isfinite(sd) and sd > 0

    def test_uninformative_release_is_singular(self):
        # every observation clamps to U, so the release does not move with mu
        with pytest.raises(EstimationError):
            approx_pivot_sd([10.0, 1.0], LocScaleModel(), SeedBank(12), R_big=50)

    def test_needs_enough_members(self):
        with pytest.raises(ValueError):
            approx_pivot_sd([1.0, 1.0], LocScaleModel(), SeedBank(1), R_big=2)
        with pytest.raises(ValueError):
            approx_pivot_sd([1.0, 1.0], LocScaleModel(), SeedBank(1), delta=0)
