"""Bayesian temporal matrix and tensor factorization with Gibbs sampling."""
__version__ = "0.1.0"

from ._backend import get_backend, set_backend
from .btmf import HyperPriors, ModelConfig, PosteriorSummary, SamplerError, gibbs_step, impute
from .bttf import gibbs_step_tensor, impute_tensor
from .data import MaskSpec, SeriesMatrix, SeriesTensor, apply_mask, load_series, mape, rmse
from .forecast import RollingConfig, rolling_forecast

__all__ = [
    "HyperPriors",
    "MaskSpec",
    "ModelConfig",
    "PosteriorSummary",
    "RollingConfig",
    "SamplerError",
    "SeriesMatrix",
    "SeriesTensor",
    "apply_mask",
    "get_backend",
    "gibbs_step",
    "gibbs_step_tensor",
    "impute",
    "impute_tensor",
    "load_series",
    "mape",
    "rmse",
    "rolling_forecast",
    "set_backend",
]
