from .base import Model, Seeds
from .linreg import LinRegConfig, LinRegModel, linreg_F, linreg_generate, linreg_release
from .locscale import LocScaleConfig, LocScaleModel, locscale_generate, locscale_release
from .logistic import (
    BetaQuantileTable,
    LogisticConfig,
    LogisticModel,
    beta_moment_match,
    logistic_generate,
    logistic_loss,
    op_logistic_batch,
)
from .toy import GaussianShiftModel

__all__ = [
    "BetaQuantileTable",
    "GaussianShiftModel",
    "LinRegConfig",
    "LinRegModel",
    "LocScaleConfig",
    "LocScaleModel",
    "LogisticConfig",
    "LogisticModel",
    "Model",
    "Seeds",
    "beta_moment_match",
    "linreg_F",
    "linreg_generate",
    "linreg_release",
    "locscale_generate",
    "locscale_release",
    "logistic_generate",
    "logistic_loss",
    "op_logistic_batch",
]
