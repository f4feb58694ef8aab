"""Gaussian-process engine: kernels, fitting, pruning and posteriors."""

from src.gp.kernels import Hyperparams, KernelKind, gram, kernel, naive_kernel
from src.gp.model import (
    FegpModel,
    FitOptions,
    FitResult,
    Optimizer,
    PrunePolicy,
    TrainingWindow,
    build_covariance,
    fit,
    fit_with_trace,
    load_model,
    nlml,
    nlml_and_grad,
    noise_estimate,
    prune,
    save_model,
)
from src.gp.posterior import (
    GaussianPosterior,
    MixturePosterior,
    PosteriorComponent,
    RiskReport,
    component,
    forecast_record,
    map_point,
    predict_fegp,
    predict_naive,
    risk,
)

__all__ = [
    "FegpModel",
    "FitOptions",
    "FitResult",
    "GaussianPosterior",
    "Hyperparams",
    "KernelKind",
    "MixturePosterior",
    "Optimizer",
    "PosteriorComponent",
    "PrunePolicy",
    "RiskReport",
    "TrainingWindow",
    "build_covariance",
    "component",
    "fit",
    "fit_with_trace",
    "forecast_record",
    "gram",
    "kernel",
    "load_model",
    "map_point",
    "naive_kernel",
    "nlml",
    "nlml_and_grad",
    "noise_estimate",
    "predict_fegp",
    "predict_naive",
    "prune",
    "risk",
    "save_model",
]
