"""Gaussian shift model ``s = A theta + sigma/sqrt(n) u`` with a known binding function."""

from __future__ import annotations

import numpy as np

from ..mechanisms import GDP, PrivacyBudget
from .base import Model, Seeds


class GaussianShiftModel(Model):
    """Statistics are a linear map of the parameter plus Gaussian noise.

    The binding function is ``b(theta) = A theta`` exactly, which makes this
    model an oracle for the estimators.  No privacy mechanism is involved;
    the declared budget is nominal.
    """

    name = "toy"

    def __init__(self, A=None, n: int = 100, sigma: float = 1.0, theta_box=None, q: int = 2):
        self.A = np.eye(q) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        p, q = self.A.shape
        self.param_names = tuple(f"theta{i}" for i in range(q))
        self.stat_names = tuple(f"s{j}" for j in range(p))
        self.n = n
        self.sigma = float(sigma)
        if theta_box is None:
            theta_box = [[-10.0, 10.0]] * q
        self.theta_box = np.array(theta_box, dtype=float)

    def draw_seeds(self, data_stream, dp_stream, R):
        return Seeds(data_stream.standard_normal((R, self.p)), np.zeros((R, 0)))

    def simulate(self, thetas, seeds):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        mean = thetas @ self.A.T
        return mean[:, None, :] + self.sigma / np.sqrt(self.n) * seeds.u[None]

    def naive_estimate(self, s):
        sol, *_ = np.linalg.lstsq(self.A, np.asarray(s, dtype=float), rcond=None)
        return self.clip(sol)

    def channel_budgets(self):
        return [PrivacyBudget(GDP, float("inf"))]

    def constants(self):
        return {"model": self.name, "n": self.n, "sigma": self.sigma}
