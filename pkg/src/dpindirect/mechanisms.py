"""Release mechanisms: clamps, additive noise, K-norm and objective perturbation.

The samplers take an explicit :class:`numpy.random.Generator` so that every
draw can be tied to a :mod:`dpindirect.seedbank` stream.  None of them is
hardened against floating-point side channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .optim import minimize_box

#: Kinds of privacy guarantee that :func:`compose` understands.
PURE_DP = "pureDP"
GDP = "GDP"

KNORM_MAX_ATTEMPTS = 10**6


class PrivacyBudgetError(ValueError):
    pass


class RejectionSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivacyBudget:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in (PURE_DP, GDP):
            raise PrivacyBudgetError(f"unknown budget kind {self.kind!r}")
        if not self.value > 0:
            raise PrivacyBudgetError("privacy budget must be positive")

    def __str__(self):
        symbol = "eps" if self.kind == PURE_DP else "mu"
        return f"{self.kind}({symbol}={self.value:.17g})"


def compose(budgets: Sequence[PrivacyBudget]) -> PrivacyBudget:
    """Budget of the joint release of independently noised mechanisms.

    Pure DP adds up; GDP composes in root-sum-square.
    """
    budgets = list(budgets)
    if not budgets:
        raise PrivacyBudgetError("nothing to compose")
    kinds = {b.kind for b in budgets}
    if len(kinds) > 1:
        raise PrivacyBudgetError(f"cannot compose mixed budget kinds {sorted(kinds)}")
    kind = kinds.pop()
    values = [b.value for b in budgets]
    if kind == PURE_DP:
        return PrivacyBudget(kind, math.fsum(values))
    return PrivacyBudget(kind, math.sqrt(math.fsum(v * v for v in values)))


# -- clamping ---------------------------------------------------------------


def clamp(x, lower, upper):
    """Project ``x`` onto ``[lower, upper]``."""
    if not lower < upper:
        raise ValueError("clamp needs lower < upper")
    return np.minimum(np.maximum(x, lower), upper)


def smooth_clamp(x, lower, upper, kind="sigmoid"):
    """Continuously differentiable stand-in for :func:`clamp`.

    ``sigmoid`` maps onto the open interval with unit slope at the midpoint;
    ``smoothstep`` is exact outside ``[lower, upper]`` and cubic inside.
    """
    if not lower < upper:
        raise ValueError("smooth_clamp needs lower < upper")
    width = upper - lower
    x = np.asarray(x, dtype=float)
    if kind == "sigmoid":
        t = 4.0 / width * (x - 0.5 * (lower + upper))
        return lower + width * _expit(t)
    if kind == "smoothstep":
        t = np.clip((x - lower) / width, 0.0, 1.0)
        return lower + width * (3.0 * t**2 - 2.0 * t**3)
    raise ValueError(f"unknown smooth clamp {kind!r}")


def _expit(t):
    # scipy.special.expit without the import cost in hot loops
    return 0.5 * (1.0 + np.tanh(0.5 * t))


# -- additive mechanisms ----------------------------------------------------


def laplace_scale(sensitivity_l1, eps):
    if not eps > 0:
        raise PrivacyBudgetError("eps must be positive")
    if sensitivity_l1 < 0:
        raise ValueError("sensitivity must be nonnegative")
    return sensitivity_l1 / eps


def add_laplace(value, sensitivity_l1, eps, stream):
    """Laplace mechanism with scale ``sensitivity_l1 / eps`` (eps-DP)."""
    value = np.asarray(value, dtype=float)
    b = laplace_scale(sensitivity_l1, eps)
    if b == 0:
        return value.copy()
    return value + stream.laplace(0.0, b, value.shape)


def gaussian_sigma(sensitivity_l2, mu):
    if not mu > 0:
        raise PrivacyBudgetError("mu must be positive")
    if sensitivity_l2 < 0:
        raise ValueError("sensitivity must be nonnegative")
    return sensitivity_l2 / mu


def add_gaussian(value, sensitivity_l2, mu, stream):
    """Gaussian mechanism with ``sigma = sensitivity_l2 / mu`` (mu-GDP)."""
    value = np.asarray(value, dtype=float)
    sigma = gaussian_sigma(sensitivity_l2, mu)
    return value + sigma * stream.standard_normal(value.shape)


# -- l-infinity and K-norm samplers ------------------------------------------


def sample_linf(c, m, stream, *, return_radius=False):
    """Draw ``V`` in R^m with density proportional to ``exp(-c * ||V||_inf)``.

    Uses the radial decomposition ``V = r * U`` with ``U`` uniform on the
    cube and ``r ~ Gamma(m + 1, rate=c)``.  With ``return_radius`` the pair
    ``(V, r)`` is returned.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    if m < 1:
        raise ValueError("dimension must be at least 1")
    u = stream.uniform(-1.0, 1.0, m)
    r = stream.gamma(m + 1, 1.0 / c)
    return (r * u, r) if return_radius else r * u


def hull_contains(u) -> np.ndarray | bool:
    """Membership in the convex hull of the sensitivity space of
    ``T(z) = (sum z_i, sum z_i**2)`` for ``z_i`` in ``[0, 1]``.

    Vectorized over leading axes of ``u`` (last axis of length 2).
    """
    u = np.asarray(u, dtype=float)
    u1, u2 = u[..., 0], u[..., 1]
    left = (u1 >= -1) & (u1 <= -0.5) & ((u1 + 1) ** 2 - 1 <= u2) & (u2 <= -(u1**2))
    mid = (u1 > -0.5) & (u1 <= 0.5) & (u1 - 0.25 <= u2) & (u2 <= u1 + 0.25)
    right = (u1 >= 0.5) & (u1 <= 1) & (u1**2 <= u2) & (u2 <= 1 - (u1 - 1) ** 2)
    inside = left | mid | right
    return bool(inside) if inside.ndim == 0 else inside


def knorm_noise(eps, delta_inf, delta_k, stream, *, max_attempts=KNORM_MAX_ATTEMPTS):
    """Noise vector of the K-norm mechanism with ``K`` the hull above.

    A direction is rejection-sampled uniformly from ``K`` inside the cube of
    half-width ``delta_inf``; the radius is ``Gamma(3, rate=eps/delta_k)``.
    """
    if not eps > 0:
        raise PrivacyBudgetError("eps must be positive")
    if not (delta_inf > 0 and delta_k > 0):
        raise ValueError("sensitivities must be positive")
    m = 2
    r = stream.gamma(m + 1, delta_k / eps)
    # draw in blocks; the per-candidate order of acceptance is preserved
    attempts = 0
    block = 16
    while attempts < max_attempts:
        n = min(block, max_attempts - attempts)
        cand = stream.uniform(-delta_inf, delta_inf, (n, m))
        ok = np.flatnonzero(hull_contains(cand / delta_inf))
        if ok.size:
            return r * cand[ok[0]]
        attempts += n
    raise RejectionSamplingError(f"K-norm sampler found no point in {max_attempts} attempts")


def knorm_mechanism(t_value, eps, delta_inf, delta_k, stream, **kwargs):
    """Release ``t_value`` plus K-norm noise (eps-DP)."""
    t_value = np.asarray(t_value, dtype=float)
    return t_value + knorm_noise(eps, delta_inf, delta_k, stream, **kwargs)


# -- objective perturbation -------------------------------------------------


def objective_perturbation_gamma(eps, q, lam):
    """Ridge coefficient of l-infinity objective perturbation."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if not (eps > 0 and lam > 0):
        raise ValueError("eps and lambda must be positive")
    t = eps * (1.0 - q)
    # expm1 overflows past ~709; the coefficient is then zero to double precision
    return lam / math.expm1(t) if t < 700 else 0.0


def objective_perturb(
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    n: int,
    bounds,
    eps: float,
    q: float,
    lam: float,
    delta_inf: float,
    stream: np.random.Generator,
    *,
    x0=None,
    regularizer: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
):
    """l-infinity objective perturbation of a convex empirical risk.

    ``loss(theta)`` returns the average loss and its gradient.  Returns the
    private minimizer and the :class:`~dpindirect.optim.BoxResult` of the
    inner solve.
    """
    bounds = np.asarray(bounds, dtype=float)
    m = bounds.shape[0]
    gamma = objective_perturbation_gamma(eps, q, lam)
    if not delta_inf > 0:
        raise ValueError("delta_inf must be positive")
    v = sample_linf(eps * q / delta_inf, m, stream)

    def perturbed(theta):
        f, g = loss(theta)
        f = f + gamma / (2 * n) * theta @ theta + v @ theta / n
        g = g + gamma / n * theta + v / n
        if regularizer is not None:
            rf, rg = regularizer(theta)
            f, g = f + rf / n, g + rg / n
        return f, g

    start = np.clip(np.zeros(m) if x0 is None else np.asarray(x0, float), bounds[:, 0], bounds[:, 1])
    res = minimize_box(perturbed, start, bounds, jac=True, gtol=1e-10)
    if not res.converged:
        raise RuntimeError(f"objective perturbation did not converge (|grad|={res.grad_norm:.3g})")
    return res.x, res
