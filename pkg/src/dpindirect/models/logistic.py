"""Logistic regression with a Beta-distributed predictor.

The coefficients are released by l-infinity objective perturbation and the
predictor's first two sums by the K-norm mechanism.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..mechanisms import (
    PURE_DP,
    PrivacyBudget,
    _expit,
    knorm_noise,
    objective_perturbation_gamma,
    sample_linf,
)
from .base import Model, Seeds

Y_CHANNELS = ("indicator", "smooth", "expit")


@dataclass(frozen=True)
class LogisticConfig:
    n: int = 100
    eps: float = 10.0
    q: float = 0.85
    lam: float = 0.5
    Delta_inf: float = 2.0
    op_share: float = 0.9
    coef_bound: float = 10.0
    ab_box: tuple = (0.05, 20.0)
    # synthetic y-channel used by the estimators; observed data always use
    # the indicator
    y_channel: str = "indicator"
    y_bandwidth: float = 0.05
    beta_ppf: str = "table"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.op_share < 1:
            raise ValueError("op_share must lie in (0, 1)")
        if self.y_channel not in Y_CHANNELS:
            raise ValueError(f"unknown y_channel {self.y_channel!r}")
        if self.beta_ppf not in ("table", "exact"):
            raise ValueError(f"unknown beta_ppf {self.beta_ppf!r}")
        if not 0 < self.ab_box[0] < self.ab_box[1]:
            raise ValueError("invalid Beta parameter box")

    @property
    def eps_op(self) -> float:
        return self.op_share * self.eps

    @property
    def eps_knorm(self) -> float:
        return self.eps - self.eps_op

    @property
    def gamma(self) -> float:
        return objective_perturbation_gamma(self.eps_op, self.q, self.lam)


# -- Beta quantiles ----------------------------------------------------------


class BetaQuantileTable:
    """Piecewise-linear Beta inverse CDF on a fixed grid of probabilities.

    The grid is denser near 0 and 1.  For fixed uniforms the interpolation
    weights do not depend on ``(a, b)``, so the resulting map is as smooth in
    ``(a, b)`` as the exact quantile function, at a fraction of the cost.
    """

    def __init__(self, size: int = 257, cache_size: int = 64):
        t = np.linspace(0.0, 1.0, size)
        self.nodes = 0.5 * (1.0 - np.cos(np.pi * t))
        self.nodes[0], self.nodes[-1] = 0.0, 1.0
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def values(self, a, b) -> np.ndarray:
        key = (float(a), float(b))
        tab = self._cache.get(key)
        if tab is None:
            tab = special.betaincinv(a, b, self.nodes)
            tab[0], tab[-1] = 0.0, 1.0
            self._cache[key] = tab
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return tab

    def weights(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.searchsorted(self.nodes, u, side="right") - 1, 0, self.nodes.size - 2)
        lo = self.nodes[idx]
        w = (u - lo) / (self.nodes[idx + 1] - lo)
        return idx, w

    def __call__(self, a, b, u, weights=None):
        idx, w = self.weights(u) if weights is None else weights
        tab = self.values(a, b)
        z = tab[idx] + w * (tab[idx + 1] - tab[idx])
        # the end cells hold the power-law singularities of the quantile
        # function; evaluate those few points exactly
        edge = (idx == 0) | (idx == self.nodes.size - 2)
        if edge.any():
            ue = self.nodes[idx[edge]] + w[edge] * (self.nodes[idx[edge] + 1] - self.nodes[idx[edge]])
            z[edge] = special.betaincinv(a, b, ue)
        return z


def logistic_generate(theta, u, *, y_channel="indicator", bandwidth=0.05, ppf=None):
    """Predictor ``x`` in [-1, 1] and response ``y`` from ``2n`` uniforms."""
    beta0, beta1, a, b = theta
    if not (a > 0 and b > 0):
        raise ValueError("Beta parameters must be positive")
    u = np.asarray(u, dtype=float)
    n = u.shape[-1] // 2
    z = special.betaincinv(a, b, u[..., :n]) if ppf is None else ppf(a, b, u[..., :n])
    x = 2.0 * z - 1.0
    y = _response(_expit(beta0 + beta1 * x), u[..., n:], y_channel, bandwidth)
    return x, y


def _response(prob, v, channel, bandwidth):
    if channel == "indicator":
        return (v <= prob).astype(float)
    if channel == "smooth":
        return _expit((prob - v) / bandwidth)
    if channel == "expit":
        return prob
    raise ValueError(f"unknown y_channel {channel!r}")


# -- objective perturbation, batched ---------------------------------------


def _softplus(t):
    # log(1 + e^t) without overflow; much faster than np.logaddexp
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _op_value(beta, x, y, v, gamma, n):
    eta = beta[:, 0, None] + beta[:, 1, None] * x
    loss = np.mean(_softplus(eta) - y * eta, axis=1)
    return loss + (gamma / (2 * n)) * np.sum(beta * beta, axis=1) + np.sum(v * beta, axis=1) / n


def op_logistic_batch(x, y, v, gamma, bound, *, tol=1e-10, maxiter=60):
    """Objective-perturbed logistic fits for many datasets at once.

    ``x`` and ``y`` have shape ``(M, n)`` and ``v`` shape ``(M, 2)``.  Each
    row minimizes ``mean log-loss + gamma/(2n)|b|^2 + v.b/n`` over the box
    ``[-bound, bound]^2`` by projected Newton with backtracking.  Returns
    ``(beta, converged)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    M, n = x.shape
    reg = gamma / n
    beta = np.zeros((M, 2))
    done = np.zeros(M, dtype=bool)
    active = np.arange(M)
    fval = _op_value(beta, x, y, v, gamma, n)
    for _ in range(maxiter):
        if active.size == 0:
            break
        if active.size == M:
            bx, xa, ya, va = beta, x, y, v
        else:
            bx, xa, ya, va = beta[active], x[active], y[active], v[active]
        eta = bx[:, 0, None] + bx[:, 1, None] * xa
        p = _expit(eta)
        r = p - ya
        w = p * (1.0 - p)
        g0 = r.mean(axis=1) + reg * bx[:, 0] + va[:, 0] / n
        g1 = (r * xa).mean(axis=1) + reg * bx[:, 1] + va[:, 1] / n
        wx = w * xa
        h00 = w.mean(axis=1) + reg
        h01 = wx.mean(axis=1)
        h11 = (wx * xa).mean(axis=1) + reg

        # coordinates pinned at the box with the gradient pointing outward
        pin0 = ((bx[:, 0] <= -bound) & (g0 > 0)) | ((bx[:, 0] >= bound) & (g0 < 0))
        pin1 = ((bx[:, 1] <= -bound) & (g1 > 0)) | ((bx[:, 1] >= bound) & (g1 < 0))
        det = h00 * h11 - h01 * h01
        d0 = -(h11 * g0 - h01 * g1) / det
        d1 = -(h00 * g1 - h01 * g0) / det
        only0 = ~pin0 & pin1
        only1 = pin0 & ~pin1
        d0 = np.where(only0, -g0 / h00, np.where(pin0, 0.0, d0))
        d1 = np.where(only1, -g1 / h11, np.where(pin1, 0.0, d1))
        step = np.stack([d0, d1], axis=1)
        big = np.max(np.abs(step), axis=1)
        step *= np.minimum(1.0, 5.0 / np.maximum(big, 1e-300))[:, None]

        f0 = fval[active]
        slope = g0 * step[:, 0] + g1 * step[:, 1]
        t = np.ones(active.size)
        trial = np.clip(bx + step, -bound, bound)
        for _ls in range(30):
            f1 = _op_value(trial, xa, ya, va, gamma, n)
            bad = f1 > f0 + 1e-4 * t * np.minimum(slope, 0.0) + 1e-15 * np.abs(f0)
            if not bad.any():
                break
            t = np.where(bad, 0.5 * t, t)
            trial = np.where(bad[:, None], np.clip(bx + t[:, None] * step, -bound, bound), trial)
        moved = np.max(np.abs(trial - bx), axis=1)
        beta[active] = trial
        fval[active] = f1
        fin = moved < tol
        done[active[fin]] = True
        active = active[~fin]
    return beta, done


# -- model -------------------------------------------------------------------


class LogisticModel(Model):
    name = "logistic"
    param_names = ("beta0", "beta1", "a", "b")
    stat_names = ("beta0", "beta1", "sum_z", "sum_z2")
    # the indicator response makes the ensemble mean a step function at
    # scales below about 1/(n R), so derivatives need a coarser stencil
    fd_step = 1e-3

    @property
    def zero_tol(self):
        # with the indicator response the objective cannot reach zero; a
        # whitened residual of ~3e-3 ensemble standard deviations is
        # statistically immaterial
        return 1e-5 if self.cfg.y_channel == "indicator" else 1e-14

    def __init__(self, cfg: LogisticConfig | None = None, table: BetaQuantileTable | None = None):
        self.cfg = cfg or LogisticConfig()
        self.n = self.cfg.n
        c = self.cfg.coef_bound
        self.theta_box = np.array([[-c, c], [-c, c], list(self.cfg.ab_box), list(self.cfg.ab_box)])
        self.table = table or BetaQuantileTable()

    def draw_seeds(self, data_stream, dp_stream, R):
        cfg = self.cfg
        u = data_stream.random((R, 2 * self.n))
        u_dp = np.empty((R, 4))
        for r in range(R):
            u_dp[r, :2] = sample_linf(cfg.eps_op * cfg.q / cfg.Delta_inf, 2, dp_stream)
            u_dp[r, 2:] = knorm_noise(cfg.eps_knorm, 1.0, 1.0, dp_stream)
        return Seeds(u, u_dp)

    def _z(self, a, b, seeds):
        if self.cfg.beta_ppf == "exact":
            return special.betaincinv(a, b, seeds.u[:, : self.n])
        w = seeds.cache.get("beta_weights")
        if w is None:
            w = seeds.cache["beta_weights"] = self.table.weights(seeds.u[:, : self.n])
        return self.table(a, b, None, weights=w)

    def simulate(self, thetas, seeds, observed=False):
        cfg = self.cfg
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        k, R, n = thetas.shape[0], seeds.R, self.n
        channel = "indicator" if observed else cfg.y_channel
        zs: dict = {}
        xs = np.empty((k, R, n))
        ys = np.empty((k, R, n))
        out = np.empty((k, R, 4))
        for i, (b0, b1, a, b) in enumerate(thetas):
            if not (a > 0 and b > 0):
                raise ValueError("Beta parameters must be positive")
            if (a, b) not in zs:
                z = self._z(a, b, seeds)
                zs[(a, b)] = (z, z.sum(axis=1), (z * z).sum(axis=1))
            z, t1, t2 = zs[(a, b)]
            xs[i] = 2.0 * z - 1.0
            ys[i] = _response(_expit(b0 + b1 * xs[i]), seeds.u[:, n:], channel, cfg.y_bandwidth)
            out[i, :, 2] = t1
            out[i, :, 3] = t2
        v = np.broadcast_to(seeds.u_dp[None, :, :2], (k, R, 2)).reshape(k * R, 2)
        beta, ok = op_logistic_batch(xs.reshape(k * R, n), ys.reshape(k * R, n), v,
                                     cfg.gamma, cfg.coef_bound)
        if not ok.all():
            raise RuntimeError(f"objective perturbation failed to converge on {np.sum(~ok)} datasets")
        out[:, :, :2] = beta.reshape(k, R, 2)
        out[:, :, 2:] += seeds.u_dp[None, :, 2:]
        return out

    def sample_statistic(self, theta, data_stream, dp_stream):
        seeds = self.draw_seeds(data_stream, dp_stream, 1)
        return self.simulate(np.atleast_2d(theta), seeds, observed=True)[0, 0]

    def naive_estimate(self, s):
        s = np.asarray(s, dtype=float)
        m1 = s[2] / self.n
        m2 = s[3] / self.n
        a, b = beta_moment_match(m1, m2 - m1 * m1)
        return self.clip([s[0], s[1], a, b])

    def channel_budgets(self):
        return [PrivacyBudget(PURE_DP, self.cfg.eps_op), PrivacyBudget(PURE_DP, self.cfg.eps_knorm)]

    def constants(self):
        c = self.cfg
        return {**super().constants(), "eps": c.eps, "q": c.q, "lambda": c.lam,
                "Delta_inf": c.Delta_inf, "gamma": c.gamma, "y_channel": c.y_channel}


def beta_moment_match(mean, var):
    """Beta ``(a, b)`` with the given mean and variance.

    Out-of-range moments (possible after noise) are pulled back to the
    nearest admissible values first.
    """
    mean = min(max(float(mean), 1e-3), 1 - 1e-3)
    cap = mean * (1 - mean)
    var = min(max(float(var), 1e-6 * cap), 0.999 * cap)
    common = cap / var - 1.0
    return mean * common, (1.0 - mean) * common


def logistic_loss(x, y):
    """Average log-loss and gradient as a closure, for the unbatched path."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def loss(beta):
        eta = beta[0] + beta[1] * x
        p = _expit(eta)
        r = p - y
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta)), np.array([r.mean(), (r * x).mean()])

    return loss


__all__ = [
    "BetaQuantileTable",
    "LogisticConfig",
    "LogisticModel",
    "beta_moment_match",
    "logistic_generate",
    "logistic_loss",
    "op_logistic_batch",
]
