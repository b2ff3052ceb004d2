"""Quick property checks runnable without pytest (``dpindirect selftest``)."""

from __future__ import annotations

import time

import numpy as np

from . import mechanisms as mech
from .bootstrap import ci_indices, p_value
from .indirect import SynthEnsemble, approx_pivot_sd, estimate
from .models import GaussianShiftModel, LinRegModel, LocScaleConfig, LocScaleModel, LogisticModel
from .seedbank import SeedBank


def check_mechanisms():
    out = []
    rng = np.random.Generator(np.random.Philox(1))
    cand = rng.uniform(-1, 1, (100_000, 2))
    rate = float(np.mean(mech.hull_contains(cand)))
    out.append(("knorm acceptance 5/24", abs(rate - 5 / 24) <= 0.01, f"{rate:.4f}"))
    g = mech.objective_perturbation_gamma(1.0, 0.85, 0.5)
    out.append(("objective perturbation gamma", abs(g - 3.08962) <= 1e-4, f"{g:.6f}"))
    b = mech.compose([mech.PrivacyBudget(mech.PURE_DP, 0.9), mech.PrivacyBudget(mech.PURE_DP, 0.1)])
    out.append(("pure DP composition", b.value == 1.0, str(b)))
    r = [mech.sample_linf(2.0, 2, rng, return_radius=True)[1] for _ in range(20_000)]
    out.append(("l-inf radial mean", abs(np.mean(r) / 1.5 - 1) <= 0.02, f"{np.mean(r):.4f}"))
    return out


def check_estimators():
    out = []
    bank = SeedBank(3)
    m = LocScaleModel(LocScaleConfig(U=10.0, L=-10.0))
    ens = SynthEnsemble.from_bank(m, bank, 1, (0,))
    s = ens.evaluate([[1.0, 1.0]])[0, 0]
    res = estimate(s, m, mode="IND", ensemble=ens)
    out.append(("seed-match recovery", res.objective_value < 1e-10 and
                np.max(np.abs(res.theta_hat - 1.0)) < 1e-4, f"f={res.objective_value:.2e}"))
    A = np.array([[2.0, 0.5], [-0.3, 1.5]])
    toy = GaussianShiftModel(A, n=100)
    ens = SynthEnsemble.from_bank(toy, bank, 2000, (1,), tag="pivot")
    _, Bhat, _, _ = approx_pivot_sd([0.3, -0.2], toy, ensemble=ens, full=True)
    out.append(("pivot Jacobian on linear map", np.max(np.abs(Bhat - A)) <= 1e-3,
                f"err={np.max(np.abs(Bhat - A)):.2e}"))
    return out


def check_plumbing():
    out = []
    ok = ci_indices(199, 0.05) == (5, 195) and ci_indices(399, 0.1) == (20, 380) \
        and ci_indices(999, 0.02) == (10, 990)
    out.append(("order-statistic indices", ok, ""))
    p_lo = p_value(10.0, np.zeros(199))
    p_hi = p_value(0.0, np.ones(199))
    out.append(("p-value bounds", p_lo == 1 / 200 and p_hi == 1.0, f"{p_lo}, {p_hi}"))
    return out


def run_selftest(write=print) -> bool:
    all_ok = True
    for group in (check_mechanisms, check_estimators, check_plumbing):
        for name, ok, detail in group():
            all_ok &= bool(ok)
            write(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    return all_ok


def run_bench(models=("locscale", "linreg", "logistic"), repeat=5, write=print):
    """Time one ensemble evaluation on a 5-point stencil and one ADI fit."""
    bank = SeedBank(11)
    builders = {"locscale": (LocScaleModel, [1.0, 1.0], 50),
                "linreg": (LinRegModel, [0.5, 0.0, 0.0, 1.0, 1.0], 50),
                "logistic": (LogisticModel, [0.5, 2.0, 1.0, 1.0], 200)}
    results = {}
    for name in models:
        cls, theta, R = builders[name]
        m = cls()
        ens = SynthEnsemble.from_bank(m, bank, R, (0,))
        pts = np.array([theta] * (m.q + 1), dtype=float)
        ens.evaluate(pts)
        t0 = time.perf_counter()
        for _ in range(repeat):
            ens.evaluate(pts)
        t_eval = (time.perf_counter() - t0) / repeat
        s = m.sample_statistic(theta, bank.stream("data", (0,)), bank.stream("dp", (0,)))
        t0 = time.perf_counter()
        for _ in range(repeat):
            estimate(s, m, ensemble=ens)
        t_fit = (time.perf_counter() - t0) / repeat
        results[name] = (t_eval, t_fit)
        write(f"{name:9s} R={R:4d}  stencil eval {t_eval * 1e3:8.2f} ms   ADI fit {t_fit * 1e3:8.2f} ms")
    return results


__all__ = ["run_selftest", "run_bench"]
