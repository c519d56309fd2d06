"""Decomposition-ensemble forecasting.

The input series is decomposed into oscillatory components plus a
residue; one forecaster is trained per component (all sharing the same
covariates) and the final forecast is the sum of the component
forecasts.  Near-constant components skip training and are forecast by
persistence of their last value, which keeps degenerate decompositions
exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..decomposition import Decomposition, eemd
from ..errors import ValidationError
from .tide import ForecastTask, TideConfig
from .training import TideModel, train_tide

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleForecast:
    total: np.ndarray                      # [horizon]
    component_forecasts: tuple[np.ndarray, ...]  # one per oscillatory component
    residue_forecast: np.ndarray
    decomposition: Decomposition


def build_forecast_tasks(series, covariates, lookback: int, horizon: int, *,
                         stride: int = 1, end: int | None = None) -> list[ForecastTask]:
    """Sliding-window tasks over a series; targets end at or before ``end``."""
    series = np.asarray(series, dtype=np.float64)
    covariates = np.asarray(covariates, dtype=np.float64)
    n = series.size
    end = n if end is None else int(end)
    if covariates.shape[0] < end:
        raise ValidationError("covariates shorter than the requested training span")
    tasks = []
    for origin in range(lookback, end - horizon + 1, stride):
        tasks.append(ForecastTask(
            history=series[origin - lookback:origin],
            covariates=covariates[origin - lookback:origin + horizon],
            horizon=horizon,
            target=series[origin:origin + horizon],
        ))
    if not tasks:
        raise ValidationError(
            f"series of length {n} too short for lookback {lookback} + horizon {horizon}"
        )
    return tasks


class DecompositionEnsemble:
    """Per-component forecasters over a shared decomposition."""

    def __init__(self, config: TideConfig, lookback: int, horizon: int, *,
                 eemd_ensemble: int = 16, eemd_noise: float | None = None,
                 stride: int = 1, constant_tol: float = 1e-9,
                 train_kwargs: dict | None = None):
        self.config = config
        self.lookback = lookback
        self.horizon = horizon
        self.eemd_ensemble = eemd_ensemble
        self.eemd_noise = eemd_noise
        self.stride = stride
        self.constant_tol = constant_tol
        self.train_kwargs = dict(train_kwargs or {})
        self.decomposition: Decomposition | None = None
        self.models: list[TideModel | None] = []
        self.reports = []
        self._series_len = 0
        self._covariates: np.ndarray | None = None

    def _components(self) -> list[np.ndarray]:
        d = self.decomposition
        return list(d.imfs) + [d.residue]

    def fit(self, series, covariates, *, train_end: int | None = None) -> "DecompositionEnsemble":
        series = np.asarray(series, dtype=np.float64)
        covariates = np.asarray(covariates, dtype=np.float64)
        self._series_len = series.size
        self._covariates = covariates
        self.decomposition = eemd(
            series, ensemble_size=self.eemd_ensemble,
            noise_amplitude=self.eemd_noise, seed=self.config.seed,
        )
        self.models = []
        self.reports = []
        for k, component in enumerate(self._components()):
            if component.std() < self.constant_tol:
                logger.debug("component %d is constant; using persistence", k)
                self.models.append(None)
                self.reports.append(None)
                continue
            tasks = build_forecast_tasks(
                component, covariates, self.lookback, self.horizon,
                stride=self.stride, end=train_end,
            )
            cfg = replace(self.config, seed=int(self.config.seed * 1009 + k + 1))
            try:
                model, report = train_tide(tasks, cfg, **self.train_kwargs)
            except ValidationError as exc:
                raise ValidationError(f"component {k}: {exc}") from exc
            self.models.append(model)
            self.reports.append(report)
        return self

    def predict(self, origin: int | None = None) -> EnsembleForecast:
        """Forecast ``horizon`` steps from ``origin`` (default: series end)."""
        if self.decomposition is None:
            raise ValidationError("ensemble not fitted")
        origin = self._series_len if origin is None else int(origin)
        if origin < self.lookback or origin > self._series_len:
            raise ValidationError(
                f"origin {origin} outside [{self.lookback}, {self._series_len}]"
            )
        if self._covariates.shape[0] < origin + self.horizon:
            raise ValidationError("covariates do not cover origin + horizon")
        parts = []
        for k, (component, model) in enumerate(zip(self._components(), self.models)):
            if model is None:
                parts.append(np.full(self.horizon, component[origin - 1]))
                continue
            window = self._covariates[origin - self.lookback:origin + self.horizon]
            parts.append(model.predict(component[origin - self.lookback:origin], window))
        total = np.sum(parts, axis=0)
        return EnsembleForecast(
            total=total,
            component_forecasts=tuple(parts[:-1]),
            residue_forecast=parts[-1],
            decomposition=self.decomposition,
        )


def decompose_predict_ensemble(series, covariates, config: TideConfig, *,
                               lookback: int, horizon: int,
                               **kwargs) -> EnsembleForecast:
    """Decompose, train one model per component, forecast past the series end."""
    ensemble = DecompositionEnsemble(config, lookback, horizon, **kwargs)
    ensemble.fit(series, covariates)
    return ensemble.predict()
