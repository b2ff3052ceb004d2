"""Parametric-bootstrap confidence intervals and tests.

Bootstrap draws for replicate ``key`` and draw ``b`` come from the streams
``("boot:u", (*key, b))`` and ``("boot:dp", (*key, b))``, so results do not
depend on how work is scheduled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .indirect import (
    ADI,
    EstimateResult,
    EstimationError,
    EstimatorOptions,
    SynthEnsemble,
    approx_pivot_sd,
    boundary_mask,
    estimate,
)
from .models.base import Model
from .optim import minimize_box
from .seedbank import SeedBank

BASELINES = ("naive_percentile", "simplified_t", "ferrando", "efron_bc")


@dataclass
class IntervalResult:
    lo: float
    hi: float
    point: float
    alpha: float
    method: str
    B: int
    indices: tuple
    failures: int = 0
    draws: np.ndarray | None = field(default=None, repr=False)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, value) -> bool:
        return self.lo <= value <= self.hi


@dataclass
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    alpha: float
    B: int
    failures: int = 0
    draws: np.ndarray | None = field(default=None, repr=False)


# -- order statistics ----------------------------------------------------------


def _exact(alpha) -> Fraction:
    # decimal value as written, so that e.g. 200 * 0.05 / 2 is exactly 5
    return Fraction(repr(float(alpha)))


def ci_indices(B: int, alpha: float) -> tuple[int, int]:
    """1-based order-statistic indices of a two-sided bootstrap interval."""
    k = math.floor((B + 1) * _exact(alpha) / 2)
    if k < 1:
        raise ValueError(f"(B+1)*alpha/2 must be at least 1 (B={B}, alpha={alpha})")
    return k, 1 + B - k


def order_stat(values, j: int) -> float:
    """The ``j``-th smallest of ``values`` (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    return float(v[j - 1])


def p_value(T: float, T_b) -> float:
    T_b = np.asarray(T_b, dtype=float)
    return (1 + int(np.sum(T_b >= T))) / (T_b.size + 1)


# -- estimators --------------------------------------------------------------


class IndirectEstimator:
    """IND/ADI fit against one frozen ensemble; a fixed function of ``s``."""

    def __init__(self, model: Model, ensemble: SynthEnsemble, mode: str = ADI,
                 opts: EstimatorOptions | None = None, omega=None):
        self.model = model
        self.ensemble = ensemble
        self.mode = mode
        self.opts = opts or EstimatorOptions()
        self.omega = omega
        self.tag = mode.lower()

    def __call__(self, s, x0=None, strict: bool = True) -> EstimateResult:
        try:
            return estimate(s, self.model, mode=self.mode, opts=self.opts, omega=self.omega,
                            ensemble=self.ensemble, x0=x0)
        except EstimationError as exc:
            if strict or not exc.results:
                raise
            best = min(exc.results, key=lambda r: r.fun)
            box = self.model.theta_box
            theta = np.clip(best.x, box[:, 0], box[:, 1])
            return EstimateResult(theta, float(best.fun), False, sum(r.nfev for r in exc.results),
                                  boundary_mask(theta, box), 0, best.method, best.message, exc.results)


class NaiveEstimator:
    """The model's plug-in estimator, wrapped to look like a fit."""

    tag = "naive"

    def __init__(self, model: Model):
        self.model = model

    def __call__(self, s, x0=None, strict: bool = True) -> EstimateResult:
        theta = self.model.naive_estimate(s)
        return EstimateResult(theta, 0.0, True, 0, boundary_mask(theta, self.model.theta_box),
                              method="naive")


def constant_sigma(model: Model):
    """``sigma_hat(s) = 1 / sqrt(n)``."""
    value = 1.0 / math.sqrt(model.n)
    return lambda s, theta_hat: value


class PivotSigma:
    """Approximate-pivot scale evaluated at the fit of each statistic."""

    def __init__(self, model: Model, ensemble: SynthEnsemble, target: int = 0, delta: float = 1e-6):
        self.model = model
        self.ensemble = ensemble
        self.target = target
        self.delta = delta

    def __call__(self, s, theta_hat) -> float:
        return approx_pivot_sd(theta_hat, self.model, delta=self.delta, target_index=self.target,
                               ensemble=self.ensemble)


# -- bootstrap ---------------------------------------------------------------


def bootstrap_statistics(model: Model, theta, B: int, bank: SeedBank, key: Sequence[int] = ()):
    """``B`` private releases at ``theta``, shape ``(B, p)``."""
    out = np.empty((B, model.p))
    for b in range(1, B + 1):
        idx = (*key, b)
        out[b - 1] = model.sample_statistic(theta, bank.stream("boot:u", idx), bank.stream("boot:dp", idx))
    return out


@dataclass
class Bootstrap:
    """A fit at ``s`` and fits at ``B`` bootstrap releases drawn from it."""

    s: np.ndarray
    fit: EstimateResult
    stats: np.ndarray
    fits: list

    @property
    def theta_hat(self) -> np.ndarray:
        return self.fit.theta_hat

    @property
    def B(self) -> int:
        return len(self.fits)

    @property
    def failures(self) -> int:
        return sum(not f.converged for f in self.fits)


def parametric_bootstrap(s, model: Model, estimator, B: int, bank: SeedBank, *,
                         key: Sequence[int] = (), fit: EstimateResult | None = None) -> Bootstrap:
    """Fit ``s``, draw ``B`` releases at the fit and refit each of them.

    Bootstrap fits start from the fit at ``s`` before the estimator's own
    starting points.  A bootstrap fit that fails to converge keeps its best
    iterate and is counted in :attr:`Bootstrap.failures`.
    """
    s = np.asarray(s, dtype=float)
    fit = fit or estimator(s)
    stats_b = bootstrap_statistics(model, fit.theta_hat, B, bank, key)
    fits = [estimator(sb, x0=fit.theta_hat, strict=False) for sb in stats_b]
    return Bootstrap(s, fit, stats_b, fits)


def pb_ci(
    s,
    model: Model,
    estimator,
    B: int,
    alpha: float,
    bank: SeedBank,
    *,
    key: Sequence[int] = (),
    target: int = 0,
    tau: Callable | None = None,
    tau_hat: Callable | None = None,
    sigma_hat: Callable | None = None,
    boot: Bootstrap | None = None,
    method: str | None = None,
) -> IntervalResult:
    """Studentized parametric-bootstrap interval.

    ``tau(theta)`` is the target functional (default: coordinate
    ``target``); ``tau_hat(s, theta_hat)`` its estimate and
    ``sigma_hat(s, theta_hat)`` a scale, both given the statistic and its
    fit (defaults: the fitted coordinate and ``1/sqrt(n)``).  With
    ``xi_b = (tau_hat(s_b) - tau(theta_hat)) / sigma_hat(s_b)`` the interval
    is ``tau_hat(s) + sigma_hat(s) * [xi_(k), xi_(B+1-k)]`` with
    ``k = floor((B+1) alpha / 2)``.  Pass ``boot`` to reuse bootstrap fits.
    """
    if boot is None:
        lo_i, hi_i = ci_indices(B, alpha)
        boot = parametric_bootstrap(s, model, estimator, B, bank, key=key)
    else:
        lo_i, hi_i = ci_indices(boot.B, alpha)
    tau = tau or (lambda th: float(th[target]))
    tau_hat = tau_hat or (lambda s_, th: float(th[target]))
    sigma_hat = sigma_hat or constant_sigma(model)
    theta_hat = boot.theta_hat
    center = tau(theta_hat)
    xi = np.array([(tau_hat(sb, f.theta_hat) - center) / sigma_hat(sb, f.theta_hat)
                   for sb, f in zip(boot.stats, boot.fits)])
    point = tau_hat(boot.s, theta_hat)
    scale = sigma_hat(boot.s, theta_hat)
    xs = np.sort(xi)
    return IntervalResult(point + xs[lo_i - 1] * scale, point + xs[hi_i - 1] * scale, point, alpha,
                          method or f"pb:{getattr(estimator, 'tag', 'est')}", boot.B, (lo_i, hi_i),
                          boot.failures, xi)


def null_statistic(point, scale, null, tau=None, x0=None) -> float:
    """``inf |point - tau(theta)| / scale`` over the null set.

    ``null`` is a number (point null on ``tau``), a pair ``(lo, hi)`` (an
    interval null on ``tau``) or a ``(q, 2)`` array, a box of parameters,
    for which ``tau`` must be given.
    """
    arr = np.asarray(null, dtype=float)
    if arr.ndim == 0:
        return abs(point - float(arr)) / scale
    if arr.shape == (2,):
        lo, hi = sorted(arr)
        gap = 0.0 if lo <= point <= hi else min(abs(point - lo), abs(point - hi))
        return gap / scale
    if tau is None:
        raise ValueError("a parameter-box null needs tau")
    start = arr.mean(axis=1) if x0 is None else np.clip(x0, arr[:, 0], arr[:, 1])
    res = minimize_box(lambda th: (point - tau(th)) ** 2, start, arr)
    return math.sqrt(max(res.fun, 0.0)) / scale


def pb_ht(
    s,
    model: Model,
    estimator,
    B: int,
    alpha: float,
    bank: SeedBank,
    *,
    null=0.0,
    key: Sequence[int] = (),
    target: int = 0,
    tau: Callable | None = None,
    tau_hat: Callable | None = None,
    sigma_hat: Callable | None = None,
    boot: Bootstrap | None = None,
) -> TestResult:
    """Studentized parametric-bootstrap test of ``tau(theta) in null``.

    The bootstrap is run at the unrestricted fit and compares
    ``T = inf_null |tau_hat(s) - tau| / sigma_hat(s)`` against
    ``T_b = |tau_hat(s_b) - tau(theta_hat)| / sigma_hat(s_b)``.
    """
    nb = B if boot is None else boot.B
    if (nb + 1) * _exact(alpha) < 1:
        raise ValueError("(B+1)*alpha must be at least 1")
    tau = tau or (lambda th: float(th[target]))
    tau_hat = tau_hat or (lambda s_, th: float(th[target]))
    sigma_hat = sigma_hat or constant_sigma(model)
    if boot is None:
        boot = parametric_bootstrap(s, model, estimator, B, bank, key=key)
    theta_hat = boot.theta_hat
    T = null_statistic(tau_hat(boot.s, theta_hat), sigma_hat(boot.s, theta_hat), null, tau, x0=theta_hat)
    center = tau(theta_hat)
    T_b = np.array([abs(tau_hat(sb, f.theta_hat) - center) / sigma_hat(sb, f.theta_hat)
                    for sb, f in zip(boot.stats, boot.fits)])
    p = p_value(T, T_b)
    return TestResult(T, p, p <= alpha, alpha, boot.B, boot.failures, T_b)


# -- baselines ---------------------------------------------------------------


def efron_bc_indices(theta_hat: float, draws, alpha: float) -> tuple[int, int]:
    """Order indices of the bias-corrected percentile interval."""
    draws = np.asarray(draws, dtype=float)
    B = draws.size
    frac = float(np.mean(draws < theta_hat))
    lo_f, hi_f = 1.0 / (2 * B), 1.0 - 1.0 / (2 * B)
    if not lo_f <= frac <= hi_f:
        warnings.warn(f"bias-correction fraction {frac} clamped into [{lo_f}, {hi_f}]", RuntimeWarning,
                      stacklevel=2)
        frac = min(max(frac, lo_f), hi_f)
    z0 = stats.norm.ppf(frac)
    z = stats.norm.ppf(1 - alpha / 2)
    level_lo = stats.norm.cdf(2 * z0 - z)
    level_hi = stats.norm.cdf(2 * z0 + z)
    # the guard keeps z0 = 0 on the plain percentile indices despite rounding
    lo = max(1, math.floor((B + 1) * level_lo + 1e-9))
    hi = min(B, 1 + B - math.floor((B + 1) * (1 - level_hi) + 1e-9))
    return min(lo, B), max(hi, 1)


def baseline_interval(kind: str, theta_hat: float, draws, alpha: float) -> tuple[float, float, tuple]:
    """Interval endpoints from bootstrap replicates of the plug-in estimate."""
    draws = np.asarray(draws, dtype=float)
    B = draws.size
    if kind == "efron_bc":
        lo_i, hi_i = efron_bc_indices(theta_hat, draws, alpha)
        v = np.sort(draws)
        return float(v[lo_i - 1]), float(v[hi_i - 1]), (lo_i, hi_i)
    lo_i, hi_i = ci_indices(B, alpha)
    if kind == "naive_percentile":
        v = draws
    elif kind == "simplified_t":
        v = 2 * theta_hat - draws
    elif kind == "ferrando":
        v = draws - (draws.mean() - theta_hat)
    else:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    v = np.sort(v)
    return float(v[lo_i - 1]), float(v[hi_i - 1]), (lo_i, hi_i)


def baseline_draws(s, model: Model, B: int, bank: SeedBank, key: Sequence[int] = ()):
    """Plug-in estimate at ``s`` and at ``B`` bootstrap releases from it."""
    theta_hat = model.naive_estimate(s)
    stats_b = bootstrap_statistics(model, theta_hat, B, bank, key)
    return theta_hat, np.array([model.naive_estimate(sb) for sb in stats_b])


def baseline_ci(
    s,
    model: Model,
    kind: str,
    B: int,
    alpha: float,
    bank: SeedBank,
    component_index: int = 0,
    *,
    key: Sequence[int] = (),
    draws=None,
) -> IntervalResult:
    """One of the plug-in bootstrap intervals listed in ``BASELINES``.

    ``draws`` may carry a precomputed ``(theta_hat, thetas_b)`` pair from
    :func:`baseline_draws` so several kinds can share one bootstrap.
    """
    if B * _exact(alpha) < 1:
        raise ValueError("need B >= 1/alpha")
    theta_hat, thetas_b = draws if draws is not None else baseline_draws(s, model, B, bank, key)
    point = float(theta_hat[component_index])
    lo, hi, idx = baseline_interval(kind, point, thetas_b[:, component_index], alpha)
    return IntervalResult(lo, hi, point, alpha, kind, B, idx, 0, thetas_b[:, component_index])
