from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mechanisms import PrivacyBudget, compose


@dataclass
class Seeds:
    """Frozen randomness for ``R`` synthetic releases.

    ``u`` drives the data-generating equation and ``u_dp`` the privacy
    noise; both carry ``R`` along their first axis.  ``cache`` holds
    model-specific derived quantities that depend only on the seeds.
    """

    u: np.ndarray
    u_dp: np.ndarray

    def __post_init__(self):
        self.cache = {}

    @property
    def R(self) -> int:
        return self.u.shape[0]

    def member(self, r: int) -> "Seeds":
        return Seeds(self.u[r : r + 1], self.u_dp[r : r + 1])


class Model:
    """A data-generating equation together with its private release map.

    Subclasses implement :meth:`draw_seeds` and :meth:`simulate`; the latter
    is vectorized over a batch of parameter values and all ``R`` seeds.
    """

    name = "model"
    param_names: tuple[str, ...] = ()
    stat_names: tuple[str, ...] = ()
    n: int
    theta_box: np.ndarray
    #: relative finite-difference step preferred by the estimators
    fd_step = 1e-6
    #: objective value treated as an exact match by the estimators
    zero_tol = 1e-14

    @property
    def q(self) -> int:
        return len(self.param_names)

    @property
    def p(self) -> int:
        return len(self.stat_names)

    def draw_seeds(self, data_stream, dp_stream, R: int) -> Seeds:
        raise NotImplementedError

    def simulate(self, thetas, seeds: Seeds) -> np.ndarray:
        """Released statistics, shape ``(k, R, p)``, for ``k`` parameters."""
        raise NotImplementedError

    def naive_estimate(self, s) -> np.ndarray:
        raise NotImplementedError

    def plugin_estimate(self, s) -> np.ndarray | None:
        """Optional model-specific starting point for the estimators."""
        return None

    def channel_budgets(self) -> list[PrivacyBudget]:
        raise NotImplementedError

    @property
    def budget(self) -> PrivacyBudget:
        return compose(self.channel_budgets())

    def constants(self) -> dict:
        return {"model": self.name, "n": self.n, "budget": str(self.budget)}

    # -- conveniences built on simulate ------------------------------------

    def release_from_seeds(self, theta, seeds: Seeds) -> np.ndarray:
        """Statistics, shape ``(R, p)``, at a single parameter value."""
        return self.simulate(np.atleast_2d(np.asarray(theta, dtype=float)), seeds)[0]

    def sample_statistic(self, theta, data_stream, dp_stream) -> np.ndarray:
        """One private release at ``theta`` from fresh streams."""
        seeds = self.draw_seeds(data_stream, dp_stream, 1)
        return self.release_from_seeds(theta, seeds)[0]

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.theta_box[:, 0], self.theta_box[:, 1])

    def box_center(self) -> np.ndarray:
        return self.theta_box.mean(axis=1)
