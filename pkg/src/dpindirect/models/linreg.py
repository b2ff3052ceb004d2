"""Simple linear regression released through five clamped Gaussian moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..mechanisms import GDP, PrivacyBudget
from .base import Model, Seeds

# column order of the released statistic
STATS = ("x", "y", "x2", "y2", "xy")


@dataclass(frozen=True)
class LinRegConfig:
    n: int = 200
    mu: float = 1.0
    Delta: float = 2.0

    def __post_init__(self):
        if not self.Delta > 0:
            raise ValueError("Delta must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.n < 3:
            raise ValueError("need n >= 3")

    @property
    def channel_mu(self) -> float:
        return self.mu / math.sqrt(5)

    def noise_sd(self) -> np.ndarray:
        """Gaussian noise scale of each statistic, in ``STATS`` order."""
        d, n = self.Delta, self.n
        sens = np.array([2 * d, 2 * d, d * d, d * d, 2 * d * d]) / n
        return sens / self.channel_mu


def linreg_generate(theta, u):
    beta1, beta0, mu_x, sigma_x, sigma_e = theta
    if not (sigma_x > 0 and sigma_e > 0):
        raise ValueError("sigma_x and sigma_e must be positive")
    u = np.asarray(u, dtype=float)
    n = u.shape[-1] // 2
    x = mu_x + sigma_x * u[..., :n]
    y = beta0 + beta1 * x + sigma_e * u[..., n:]
    return x, y


def _moments(x, y, d):
    d2 = d * d
    return np.stack(
        [
            np.clip(x, -d, d).mean(axis=-1),
            np.clip(y, -d, d).mean(axis=-1),
            np.minimum(x * x, d2).mean(axis=-1),
            np.minimum(y * y, d2).mean(axis=-1),
            np.clip(x * y, -d2, d2).mean(axis=-1),
        ],
        axis=-1,
    )


def linreg_release(data, u_dp, cfg: LinRegConfig):
    """Noisy clamped moments ``(x~, y~, x2~, y2~, xy~)``."""
    x, y = (np.asarray(a, dtype=float) for a in data)
    return _moments(x, y, cfg.Delta) + cfg.noise_sd() * np.asarray(u_dp, dtype=float)


def linreg_F(s, n):
    """F statistic for zero slope computed from released moments.

    Returns ``(F, valid)``; ``valid`` is false when the implied variances or
    residual variance are negative, in which case ``F`` is still returned.
    """
    xm, ym, x2, y2, xy = (float(v) for v in s)
    sxx = x2 - xm * xm
    b1 = (xy - xm * ym) / sxx if sxx != 0 else math.nan
    b0 = (ym * x2 - xm * xy) / sxx if sxx != 0 else math.nan
    s2 = n * (y2 + b1 * b1 * x2 + b0 * b0 - 2 * b1 * xy - 2 * b0 * ym + 2 * b1 * b0 * xm) / (n - 2)
    F = b1 * b1 * n * sxx / s2 if s2 != 0 else math.nan
    valid = sxx >= 0 and y2 >= ym * ym and s2 >= 0 and math.isfinite(F)
    return F, bool(valid)


class LinRegModel(Model):
    name = "linreg"
    param_names = ("beta1", "beta0", "mu_x", "sigma_x", "sigma_e")
    stat_names = STATS

    def __init__(self, cfg: LinRegConfig | None = None, theta_box=None):
        self.cfg = cfg or LinRegConfig()
        self.n = self.cfg.n
        if theta_box is None:
            theta_box = [[-10.0, 10.0]] * 3 + [[1e-6, 10.0]] * 2
        self.theta_box = np.array(theta_box, dtype=float)

    def draw_seeds(self, data_stream, dp_stream, R):
        return Seeds(data_stream.standard_normal((R, 2 * self.n)), dp_stream.standard_normal((R, 5)))

    def simulate(self, thetas, seeds):
        t = np.atleast_2d(np.asarray(thetas, dtype=float))[:, :, None, None]
        n = self.n
        x = t[:, 2] + t[:, 3] * seeds.u[None, :, :n]
        y = t[:, 1] + t[:, 0] * x + t[:, 4] * seeds.u[None, :, n:]
        return _moments(x, y, self.cfg.Delta) + self.cfg.noise_sd() * seeds.u_dp[None]

    def naive_estimate(self, s):
        xm, ym, x2, y2, _ = (float(v) for v in s)
        c = self.n / (self.n - 1)
        return self.clip([0.0, ym, xm, math.sqrt(c * max(0.0, x2 - xm * xm)),
                          math.sqrt(c * max(0.0, y2 - ym * ym))])

    def plugin_estimate(self, s):
        xm, ym, x2, y2, xy = (float(v) for v in s)
        sxx = x2 - xm * xm
        if not sxx > 0:
            return None
        b1 = (xy - xm * ym) / sxx
        b0 = ym - b1 * xm
        c = self.n / (self.n - 1)
        resid = max(0.0, y2 - ym * ym - b1 * b1 * sxx)
        return self.clip([b1, b0, xm, math.sqrt(c * sxx), math.sqrt(c * resid)])

    def channel_budgets(self):
        return [PrivacyBudget(GDP, self.cfg.channel_mu)] * 5

    def constants(self):
        return {**super().constants(), "mu": self.cfg.mu, "Delta": self.cfg.Delta}
