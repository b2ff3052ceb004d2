"""Indirect and adaptive indirect estimators on a frozen synthetic ensemble.

For a parameter ``theta`` the ensemble produces ``R`` synthetic releases
``s^r(theta)`` from fixed seeds.  The indirect estimator (``IND``) matches
the observed statistic to their mean under a fixed weight matrix; the
adaptive version (``ADI``) weights by the inverse of their sample
covariance at the same ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models.base import Model, Seeds
from .optim import BoxResult, gauss_newton_box, least_squares_box, minimize_box
from .seedbank import SeedBank

IND = "IND"
ADI = "ADI"
SOLVERS = ("gauss-newton", "trf", "lbfgsb")
START_KINDS = ("naive", "plugin", "center", "jitter")


class EstimationError(RuntimeError):
    def __init__(self, message, results=()):
        super().__init__(message)
        self.results = list(results)


class SynthEnsemble:
    """``R`` frozen seed pairs and the map ``theta -> {s^r(theta)}``."""

    def __init__(self, model: Model, seeds: Seeds):
        self.model = model
        self.seeds = seeds

    @classmethod
    def from_bank(cls, model: Model, bank: SeedBank, R: int, key: Sequence[int] = (), tag: str = "ens"):
        if R < 1:
            raise ValueError("R must be positive")
        seeds = model.draw_seeds(bank.stream(tag + ":u", key), bank.stream(tag + ":dp", key), R)
        return cls(model, seeds)

    @property
    def R(self) -> int:
        return self.seeds.R

    def evaluate(self, thetas) -> np.ndarray:
        """Synthetic statistics of shape ``(k, R, p)``."""
        return self.model.simulate(np.atleast_2d(thetas), self.seeds)

    def moments(self, thetas, need_cov: bool = True):
        """Mean ``(k, p)`` and covariance ``(k, p, p)`` at each parameter."""
        s = self.evaluate(thetas)
        return _moments(s, need_cov)


def _moments(s, need_cov=True):
    R = s.shape[1]
    m = s.mean(axis=1)
    if not need_cov:
        return m, None
    if R < 2:
        raise ValueError("the covariance needs R >= 2")
    c = s - m[:, None, :]
    S = np.einsum("kri,krj->kij", c, c) / (R - 1)
    return m, S


def ensemble_moments(E: SynthEnsemble, theta):
    m, S = E.moments(np.atleast_2d(theta))
    return m[0], S[0]


def _omega_factor(omega):
    omega = np.asarray(omega, dtype=float)
    if not np.allclose(omega, omega.T, rtol=1e-12, atol=0):
        raise ValueError("weight matrix must be symmetric")
    try:
        return np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise ValueError("weight matrix must be positive definite") from None


def default_ridge(S, scale=1e-10):
    p = S.shape[-1]
    return scale * np.trace(S, axis1=-2, axis2=-1) / p


def whitened_residuals(s, E: SynthEnsemble, thetas, mode=ADI, omega=None, ridge=None, ridge_scale=1e-10):
    """Residuals ``w`` with ``|w|^2`` equal to the chosen objective.

    ``IND``: ``w = L^T (s - m)`` with ``Omega = L L^T``.  ``ADI``:
    ``w = C^{-1} (s - m)`` with ``S + ridge I = C C^T``.
    """
    s = np.asarray(s, dtype=float)
    thetas = np.atleast_2d(thetas)
    if mode == IND:
        L = _omega_factor(np.eye(s.size) if omega is None else omega)
        m, _ = E.moments(thetas, need_cov=False)
        return (s - m) @ L
    if mode != ADI:
        raise ValueError(f"unknown mode {mode!r}")
    m, S = E.moments(thetas)
    lam = default_ridge(S, ridge_scale) if ridge is None else np.full(len(S), float(ridge))
    A = S + lam[:, None, None] * np.eye(s.size)
    try:
        C = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise EstimationError("synthetic covariance plus ridge is numerically singular") from None
    return np.linalg.solve(C, (s - m)[..., None])[..., 0]


def ind_objective(s, E: SynthEnsemble, theta, omega=None) -> float:
    w = whitened_residuals(s, E, theta, IND, omega)[0]
    return float(w @ w)


def adi_objective(s, E: SynthEnsemble, theta, ridge=None) -> float:
    w = whitened_residuals(s, E, theta, ADI, ridge=ridge)[0]
    return float(w @ w)


@dataclass(frozen=True)
class EstimatorOptions:
    solver: str = "gauss-newton"
    starts: tuple = START_KINDS
    jitter: float = 0.1
    fd_step: float | None = None  # None: the model's preferred step
    zero_tol: float | None = None  # None: the model's preferred tolerance
    maxiter: int = 100
    ridge: float | None = None
    ridge_scale: float = 1e-10

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        bad = set(self.starts) - set(START_KINDS)
        if bad:
            raise ValueError(f"unknown start kinds {sorted(bad)}")


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    objective_value: float
    converged: bool
    evaluations: int
    at_boundary: np.ndarray
    start: int = 0
    method: str = ""
    message: str = ""
    runs: list = field(default_factory=list, repr=False)


def start_points(model: Model, s, opts: EstimatorOptions, x0=None):
    width = model.theta_box[:, 1] - model.theta_box[:, 0]
    pts = [] if x0 is None else [model.clip(x0)]
    naive = model.naive_estimate(s)
    for kind in opts.starts:
        if kind == "naive":
            pts.append(naive)
        elif kind == "plugin":
            plug = model.plugin_estimate(s)
            if plug is not None:
                pts.append(model.clip(plug))
        elif kind == "center":
            pts.append(model.box_center())
        elif kind == "jitter":
            sign = np.where(np.arange(naive.size) % 2 == 0, 1.0, -1.0)
            pts.append(model.clip(naive + opts.jitter * sign * np.maximum(np.abs(naive), 0.05 * width)))
    # drop exact duplicates, keep order
    out = []
    for p in pts:
        if not any(np.array_equal(p, o) for o in out):
            out.append(p)
    return out


def boundary_mask(theta, box, rel=1e-3):
    # a diagnostic: in flat, fully clamped regions the solvers stall just
    # short of the bound rather than on it
    width = box[:, 1] - box[:, 0]
    return (theta <= box[:, 0] + rel * width) | (theta >= box[:, 1] - rel * width)


def estimate(
    s,
    model: Model,
    bank: SeedBank | None = None,
    mode: str = ADI,
    R: int | None = None,
    opts: EstimatorOptions | None = None,
    *,
    key: Sequence[int] = (),
    omega=None,
    ensemble: SynthEnsemble | None = None,
    x0=None,
) -> EstimateResult:
    """Fit ``theta`` by matching ``s`` to the synthetic ensemble.

    Either pass a prebuilt ``ensemble`` or a ``bank`` (with ``R`` and
    ``key``) from which one is drawn.  ``x0``, if given, is tried before the
    configured starts.  Starts run in order and the search stops early once
    an objective below the zero tolerance is found.
    """
    opts = opts or EstimatorOptions()
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("observed statistic must be finite")
    if ensemble is None:
        if bank is None:
            raise ValueError("need a seed bank or an ensemble")
        ensemble = SynthEnsemble.from_bank(model, bank, R or default_R(model), key)
    if omega is not None and mode == IND:
        _omega_factor(omega)
    box = model.theta_box
    fd_step = opts.fd_step or model.fd_step
    zero_tol = getattr(model, "zero_tol", 1e-14) if opts.zero_tol is None else opts.zero_tol

    def res_batch(thetas):
        return whitened_residuals(s, ensemble, thetas, mode, omega, opts.ridge, opts.ridge_scale)

    runs: list[BoxResult] = []
    best = None
    total = 0
    for i, start in enumerate(start_points(model, s, opts, x0)):
        try:
            if opts.solver == "gauss-newton":
                res = gauss_newton_box(res_batch, start, box, fd_step=fd_step, zero_tol=zero_tol,
                                       maxiter=opts.maxiter)
            elif opts.solver == "trf":
                res = least_squares_box(res_batch, start, box, fd_step=fd_step, max_nfev=opts.maxiter)
            else:
                def obj(thetas):
                    w = res_batch(thetas)
                    return np.einsum("ki,ki->k", w, w)
                res = minimize_box(obj, start, box, batch=True, fd_step=fd_step, maxiter=opts.maxiter)
        except EstimationError as exc:
            res = BoxResult(start, np.inf, False, 0, message=str(exc))
        runs.append(res)
        total += res.nfev
        if np.isfinite(res.fun) and (best is None or res.fun < best[1].fun or
                                     (res.converged and not best[1].converged and res.fun <= best[1].fun)):
            best = (i, res)
        if best is not None and best[1].fun <= zero_tol:
            break
    if best is None or not any(r.converged for r in runs):
        detail = "; ".join(f"start {j}: {r.message} (f={r.fun:.3g})" for j, r in enumerate(runs))
        raise EstimationError(f"no start converged: {detail}", runs)
    i, res = best
    theta = np.clip(res.x, box[:, 0], box[:, 1])
    return EstimateResult(theta, max(0.0, float(res.fun)), bool(res.converged), total,
                          boundary_mask(theta, box), i, res.method, res.message, runs)


def default_R(model: Model) -> int:
    return {"logistic": 200}.get(model.name, 50)


def approx_pivot_sd(
    theta_hat,
    model: Model,
    bank: SeedBank | None = None,
    R_big: int = 200,
    delta: float = 1e-6,
    target_index: int = 0,
    *,
    key: Sequence[int] = (),
    ensemble: SynthEnsemble | None = None,
    full: bool = False,
):
    """Plug-in standard deviation of one coordinate of the adaptive estimator.

    ``Sigma`` is the sample covariance of ``sqrt(n) s^r(theta_hat)`` and the
    Jacobian ``B`` a forward difference with step ``delta`` of the
    common-random-number Monte Carlo mean.  Returns
    ``sqrt([(B^T Sigma^-1 B)^-1]_ii / n)``; with ``full`` also returns
    ``(B, Sigma, V)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if ensemble is None:
        if bank is None:
            raise ValueError("need a seed bank or an ensemble")
        if R_big < model.p + 1:
            raise ValueError("R_big must be at least p + 1")
        ensemble = SynthEnsemble.from_bank(model, bank, R_big, key, tag="pivot")
    theta = np.asarray(theta_hat, dtype=float)
    q, n = theta.size, model.n
    box = model.theta_box
    pts = [theta]
    signs = np.ones(q)
    for i in range(q):
        e = np.zeros(q)
        # step inward when the forward point would leave the box
        if theta[i] + delta > box[i, 1]:
            signs[i] = -1.0
        e[i] = signs[i] * delta
        pts.append(theta + e)
    sims = ensemble.evaluate(np.array(pts))
    means = sims.mean(axis=1)
    B = (means[1:] - means[0]).T / (signs * delta)
    Sigma = np.cov(np.sqrt(n) * sims[0], rowvar=False, ddof=1)
    try:
        C = np.linalg.cholesky(Sigma)
        W = np.linalg.solve(C, B)
        info = W.T @ W
        V = _spd_inverse(info)
    except np.linalg.LinAlgError:
        raise EstimationError("singular information matrix in the pivot estimate") from None
    sd = float(np.sqrt(V[target_index, target_index] / n))
    return (sd, B, Sigma, V) if full else sd


def _spd_inverse(A):
    C = np.linalg.cholesky(A)
    Ci = np.linalg.solve(C, np.eye(A.shape[0]))
    return Ci.T @ Ci
