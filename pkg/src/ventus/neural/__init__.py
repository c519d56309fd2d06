"""Differentiable-network substrate and the dense encoder-decoder forecaster."""

from .autodiff import Adam, Tensor, finite_difference_check, mse
from .ensemble import (
    DecompositionEnsemble,
    EnsembleForecast,
    build_forecast_tasks,
    decompose_predict_ensemble,
)
from .layers import Linear, ResidualBlock, layer_norm
from .predict import (
    IterativeForecast,
    iterative_predict_chain,
    randomized_iterative_predict,
    reachable_leads,
    sample_chains,
)
from .preprocess import Scaler, normalize, rolling_median
from .tide import (
    ForecastTask,
    TideConfig,
    TideParams,
    forward_batch,
    init_tide_params,
    task_forward,
    tide_forward,
)
from .training import EarlyStopping, TideModel, TrainReport, gradient_check, train_tide

__all__ = [
    "Adam",
    "DecompositionEnsemble",
    "EarlyStopping",
    "EnsembleForecast",
    "ForecastTask",
    "IterativeForecast",
    "Linear",
    "ResidualBlock",
    "Scaler",
    "Tensor",
    "TideConfig",
    "TideModel",
    "TideParams",
    "TrainReport",
    "build_forecast_tasks",
    "decompose_predict_ensemble",
    "finite_difference_check",
    "forward_batch",
    "gradient_check",
    "init_tide_params",
    "iterative_predict_chain",
    "layer_norm",
    "mse",
    "normalize",
    "randomized_iterative_predict",
    "reachable_leads",
    "rolling_median",
    "sample_chains",
    "task_forward",
    "tide_forward",
    "train_tide",
]
