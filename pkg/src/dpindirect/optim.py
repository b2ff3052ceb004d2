"""Box-constrained minimization used by the estimators and mechanisms.

Two entry points:

* :func:`minimize_box` -- L-BFGS-B on a scalar objective, with either an
  analytic gradient or central finite differences computed from one batched
  call, and a bounded Nelder-Mead fallback when the quasi-Newton run stalls.
* :func:`least_squares_box` -- trust-region reflective Gauss-Newton on a
  residual vector, with a batched forward-difference Jacobian.  This is the
  fast path for just-identified problems whose objective has an exact zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize


@dataclass
class BoxResult:
    x: np.ndarray
    fun: float
    converged: bool
    nfev: int
    grad_norm: float = float("nan")
    method: str = ""
    message: str = ""
    history: list = field(default_factory=list, repr=False)


def _check_bounds(bounds):
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must have shape (q, 2)")
    if np.any(bounds[:, 0] > bounds[:, 1]):
        raise ValueError("empty box: some lower bound exceeds its upper bound")
    return bounds


def fd_points(x, bounds, step, scheme="central"):
    """Stencil points for a finite-difference derivative at ``x``.

    Returns ``(points, plus, minus, h)`` where rows ``plus[i]`` and
    ``minus[i]`` of ``points`` bracket coordinate ``i`` and ``h[i]`` is the
    distance between them.  Row 0 is always ``x`` itself.  Near a bound the
    stencil becomes one-sided so every point stays inside the box.
    """
    x = np.asarray(x, dtype=float)
    q = x.size
    width = bounds[:, 1] - bounds[:, 0]
    hs = step * np.where(np.isfinite(width), width, np.maximum(1.0, np.abs(x)))
    hs = np.maximum(hs, 1e-12)
    pts = [x]
    plus = np.zeros(q, dtype=int)
    minus = np.zeros(q, dtype=int)
    h = np.zeros(q)
    for i in range(q):
        e = np.zeros(q)
        e[i] = hs[i]
        up_ok = x[i] + hs[i] <= bounds[i, 1]
        dn_ok = x[i] - hs[i] >= bounds[i, 0]
        if scheme == "central" and up_ok and dn_ok:
            pts.append(x + e)
            pts.append(x - e)
            plus[i], minus[i] = len(pts) - 2, len(pts) - 1
            h[i] = 2 * hs[i]
        elif up_ok:
            pts.append(x + e)
            plus[i], minus[i] = len(pts) - 1, 0
            h[i] = hs[i]
        else:
            pts.append(x - e)
            plus[i], minus[i] = 0, len(pts) - 1
            h[i] = hs[i]
    return np.array(pts), plus, minus, h


def _projected_grad_norm(x, g, bounds):
    pg = g.copy()
    at_lo = (x <= bounds[:, 0]) & (g > 0)
    at_hi = (x >= bounds[:, 1]) & (g < 0)
    pg[at_lo | at_hi] = 0.0
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def minimize_box(
    fun: Callable,
    x0,
    bounds,
    *,
    jac: bool = False,
    batch: bool = False,
    fd_step: float = 1e-6,
    gtol: float = 1e-8,
    ftol: float = 1e-12,
    maxiter: int = 500,
    fallback: bool = True,
) -> BoxResult:
    """Minimize ``fun`` over the box ``bounds``.

    With ``jac=True``, ``fun(x)`` returns ``(value, gradient)``.  Otherwise
    the gradient is a central difference with steps ``fd_step`` times the
    box width; if ``batch`` is set, ``fun`` receives a ``(k, q)`` array of
    points and returns ``k`` values, so the whole stencil costs one call.
    """
    bounds = _check_bounds(bounds)
    x0 = np.clip(np.asarray(x0, dtype=float), bounds[:, 0], bounds[:, 1])
    nfev = 0

    if jac:
        def fg(x):
            nonlocal nfev
            nfev += 1
            f, g = fun(x)
            return float(f), np.asarray(g, dtype=float)
    else:
        def fg(x):
            nonlocal nfev
            pts, plus, minus, h = fd_points(x, bounds, fd_step)
            if batch:
                vals = np.asarray(fun(pts), dtype=float)
            else:
                vals = np.array([fun(p) for p in pts], dtype=float)
            nfev += len(pts)
            g = (vals[plus] - vals[minus]) / h
            return float(vals[0]), g

    res = optimize.minimize(
        fg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": maxiter, "gtol": gtol, "ftol": ftol},
    )
    x = np.clip(res.x, bounds[:, 0], bounds[:, 1])
    f, g = fg(x)
    gnorm = _projected_grad_norm(x, g, bounds)
    out = BoxResult(x, f, bool(res.success), nfev, gnorm, "L-BFGS-B", str(res.message))
    if out.converged or not fallback:
        return out

    # quasi-Newton stalled (typically a line-search failure on a kinked
    # objective); polish with derivative-free simplex search inside the box
    if batch:
        scalar = lambda x: float(np.asarray(fun(np.atleast_2d(x)))[0])  # noqa: E731
    elif jac:
        scalar = lambda x: float(fun(x)[0])  # noqa: E731
    else:
        scalar = lambda x: float(fun(x))  # noqa: E731
    nm = optimize.minimize(
        scalar, x, method="Nelder-Mead", bounds=bounds,
        options={"maxiter": 200 * x.size, "xatol": 1e-8, "fatol": ftol},
    )
    nfev += nm.nfev
    xn = np.clip(nm.x, bounds[:, 0], bounds[:, 1])
    if nm.fun <= f:
        fn, gn = fg(xn)
        return BoxResult(xn, fn, bool(nm.success), nfev, _projected_grad_norm(xn, gn, bounds),
                         "L-BFGS-B+Nelder-Mead", str(nm.message))
    out.nfev = nfev
    return out


def least_squares_box(
    residuals: Callable[[np.ndarray], np.ndarray],
    x0,
    bounds,
    *,
    fd_step: float = 1e-6,
    xtol: float = 1e-10,
    ftol: float = 1e-12,
    gtol: float = 1e-12,
    max_nfev: int = 200,
) -> BoxResult:
    """Minimize ``||residuals(x)||^2`` over the box.

    ``residuals`` is batched: it maps a ``(k, q)`` array of points to a
    ``(k, p)`` array.  Each Jacobian costs a single call with ``q + 1``
    points.
    """
    bounds = _check_bounds(bounds)
    x0 = np.clip(np.asarray(x0, dtype=float), bounds[:, 0], bounds[:, 1])
    # trf requires a strictly feasible start
    lo, hi = bounds[:, 0], bounds[:, 1]
    pad = 1e-10 * (hi - lo)
    x0 = np.clip(x0, lo + pad, hi - pad)
    nfev = 0
    cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def both(x):
        nonlocal nfev
        key = x.tobytes()
        if key not in cache:
            pts, plus, minus, h = fd_points(x, bounds, fd_step, scheme="forward")
            vals = np.asarray(residuals(pts), dtype=float)
            nfev += len(pts)
            jacobian = (vals[plus] - vals[minus]).T / h
            cache.clear()
            cache[key] = (vals[0], jacobian)
        return cache[key]

    res = optimize.least_squares(
        lambda x: both(x)[0], x0, jac=lambda x: both(x)[1], bounds=(lo, hi),
        method="trf", xtol=xtol, ftol=ftol, gtol=gtol, max_nfev=max_nfev, x_scale="jac",
    )
    x = np.clip(res.x, lo, hi)
    r, jacobian = both(x)
    g = 2 * jacobian.T @ r
    return BoxResult(x, float(r @ r), res.status > 0, nfev, _projected_grad_norm(x, g, bounds),
                     "trf", str(res.message))


def gauss_newton_box(
    residuals: Callable[[np.ndarray], np.ndarray],
    x0,
    bounds,
    *,
    fd_step: float = 1e-6,
    zero_tol: float = 0.0,
    xtol: float = 1e-10,
    maxiter: int = 100,
    broyden: bool = True,
) -> BoxResult:
    """Projected Gauss-Newton on ``||residuals(x)||^2`` with Broyden updates.

    ``residuals`` is batched as in :func:`least_squares_box`.  The Jacobian
    is a forward difference, refreshed only when a Broyden-updated model
    fails to produce descent.  Coordinates sitting on a bound whose step
    points outward are frozen for that iteration.  Stops once the objective
    falls to ``zero_tol``, the step shrinks below ``xtol`` times the box
    width, or no descent is possible with a fresh Jacobian.
    """
    bounds = _check_bounds(bounds)
    lo, hi = bounds[:, 0], bounds[:, 1]
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    nfev = 0

    def value(x):
        nonlocal nfev
        nfev += 1
        r = np.asarray(residuals(x[None]), dtype=float)[0]
        return r, float(r @ r) if np.all(np.isfinite(r)) else np.inf

    def linearize(x):
        nonlocal nfev
        pts, plus, minus, h = fd_points(x, bounds, fd_step, scheme="forward")
        vals = np.asarray(residuals(pts), dtype=float)
        nfev += len(pts)
        r = vals[0]
        return r, float(r @ r) if np.all(np.isfinite(r)) else np.inf, (vals[plus] - vals[minus]).T / h

    r, f, J = linearize(x)
    if not np.isfinite(f):
        return BoxResult(x, f, False, nfev, method="gauss-newton", message="nonfinite residual at start")
    fresh = True
    message = "maximum iterations reached"
    converged = False
    for _ in range(maxiter):
        if f <= zero_tol:
            message, converged = "objective below zero tolerance", True
            break
        d = _gn_step(J, r, x, lo, hi)
        accepted = False
        t = 1.0
        for _ls in range(20):
            xn = np.clip(x + t * d, lo, hi)
            if np.all(np.abs(xn - x) <= xtol * width):
                break
            rn, fn = value(xn)
            if fn < f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if fresh:
                message, converged = "no descent direction with fresh Jacobian", True
                break
            r, f, J = linearize(x)
            fresh = True
            continue
        step = xn - x
        if broyden:
            J = J + np.outer((rn - r) - J @ step, step) / (step @ step)
            fresh = False
            x, r, f = xn, rn, fn
        else:
            x = xn
            r, f, J = linearize(x)
        if np.all(np.abs(step) <= xtol * width):
            message, converged = "step below tolerance", True
            break
    g = 2 * J.T @ r
    return BoxResult(x, f, converged, nfev, _projected_grad_norm(x, g, bounds), "gauss-newton", message)


def _gn_step(J, r, x, lo, hi):
    d = np.linalg.lstsq(J, -r, rcond=None)[0]
    blocked = ((x <= lo) & (d < 0)) | ((x >= hi) & (d > 0))
    if blocked.any() and not blocked.all():
        free = ~blocked
        d = np.zeros_like(d)
        d[free] = np.linalg.lstsq(J[:, free], -r, rcond=None)[0]
    elif blocked.all():
        d = np.zeros_like(d)
    return d
