"""Normal location-scale model released through clamped mean and variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mechanisms import GDP, PrivacyBudget, smooth_clamp
from .base import Model, Seeds


@dataclass(frozen=True)
class LocScaleConfig:
    n: int = 100
    eps: float = 1.0
    L: float = 0.0
    U: float = 3.0
    clamp: str = "hard"

    def __post_init__(self):
        if not self.L < self.U:
            raise ValueError("need L < U")
        if self.n < 2:
            raise ValueError("need n >= 2 for the sample variance")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.clamp not in ("hard", "sigmoid", "smoothstep"):
            raise ValueError(f"unknown clamp {self.clamp!r}")


def locscale_generate(theta, u):
    mu, sigma = theta
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return mu + sigma * np.asarray(u, dtype=float)


def _clamp(x, cfg):
    if cfg.clamp == "hard":
        return np.clip(x, cfg.L, cfg.U)
    return smooth_clamp(x, cfg.L, cfg.U, cfg.clamp)


def locscale_release(data, u_dp, cfg: LocScaleConfig):
    """Noisy clamped mean and sample variance ``(m~, eta2~)``."""
    data = np.asarray(data, dtype=float)
    n = data.shape[-1]
    if n < 2:
        raise ValueError("need at least two observations")
    c = _clamp(data, cfg)
    m = c.mean(axis=-1)
    eta2 = c.var(axis=-1, ddof=1)
    width = cfg.U - cfg.L
    u_dp = np.asarray(u_dp, dtype=float)
    return np.stack(
        [m + width / (n * cfg.eps) * u_dp[..., 0], eta2 + width**2 / (n * cfg.eps) * u_dp[..., 1]],
        axis=-1,
    )


class LocScaleModel(Model):
    name = "locscale"
    param_names = ("mu", "sigma")
    stat_names = ("mean", "var")

    def __init__(self, cfg: LocScaleConfig | None = None, theta_box=None):
        self.cfg = cfg or LocScaleConfig()
        self.n = self.cfg.n
        self.theta_box = np.array(theta_box if theta_box is not None else [[-2.0, 10.0], [1e-6, 10.0]])

    def draw_seeds(self, data_stream, dp_stream, R):
        return Seeds(data_stream.standard_normal((R, self.n)), dp_stream.standard_normal((R, 2)))

    def simulate(self, thetas, seeds):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        x = thetas[:, 0, None, None] + thetas[:, 1, None, None] * seeds.u[None]
        return locscale_release(x, seeds.u_dp[None], self.cfg)

    def naive_estimate(self, s):
        s = np.asarray(s, dtype=float)
        return self.clip([s[0], np.sqrt(max(0.0, s[1]))])

    def channel_budgets(self):
        return [PrivacyBudget(GDP, self.cfg.eps), PrivacyBudget(GDP, self.cfg.eps)]

    def constants(self):
        c = self.cfg
        return {**super().constants(), "eps": c.eps, "L": c.L, "U": c.U, "clamp": c.clamp}
