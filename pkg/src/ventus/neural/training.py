"""Training loop for the dense forecaster.

Minimizes MSE with Adam; validation is the chronological tail of the
dataset, early stopping restores the best-validation parameters after a
20-epoch patience window.  Each training sample is conditioned on an
autoregressive step interval drawn from the configured interval set: the
interval enters as an extra static attribute (scaled by 48) and the loss
covers only the first ``interval`` horizon steps of that sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergedError, ValidationError
from .autodiff import Adam, Tensor, finite_difference_check, mse
from .preprocess import OUTLIER_Z, Scaler, normalize
from .tide import (
    INTERVAL_SCALE,
    ForecastTask,
    TideConfig,
    TideParams,
    forward_batch,
    init_tide_params,
)

logger = logging.getLogger(__name__)

PATIENCE = 20


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, patience: int = PATIENCE, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epochs_seen = 0

    def update(self, value: float) -> bool:
        self.epochs_seen += 1
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = self.epochs_seen
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainReport:
    epochs_run: int
    best_validation_loss: float
    stopped_early: bool
    loss_curve: list[tuple[float, float]]  # (train, validation) per epoch


class TideModel:
    """Trained parameters plus the scaling state needed to use them."""

    def __init__(self, params: TideParams, cov_scaler: Scaler | None,
                 y_center: float, y_scale: float):
        self.params = params
        self.config = params.config
        self.cov_scaler = cov_scaler
        self.y_center = float(y_center)
        self.y_scale = float(y_scale)

    @property
    def lookback(self) -> int:
        return self.params.lookback

    @property
    def horizon(self) -> int:
        return self.params.horizon

    def default_interval(self) -> int:
        usable = [v for v in self.config.interval_set if v <= self.horizon]
        if not usable:
            raise ValidationError("no configured interval fits within the horizon")
        return max(usable)

    def predict(self, history, covariates, static=None, *, interval: int | None = None) -> np.ndarray:
        """Forecast ``horizon`` steps from raw-scale inputs."""
        L, H = self.lookback, self.horizon
        y = np.asarray(history, dtype=np.float64)
        x = np.asarray(covariates, dtype=np.float64)
        if y.shape != (L,):
            raise ValidationError(f"history shape {y.shape} != ({L},)")
        if x.ndim != 2 or x.shape[0] < L + H:
            raise ValidationError(f"covariates must cover {L + H} steps, got {x.shape}")
        x = x[: L + H]
        if self.cov_scaler is not None:
            x = self.cov_scaler.transform(x)
        if interval is None:
            interval = self.default_interval()
        base = np.zeros(0) if static is None else np.asarray(static, dtype=np.float64)
        a = np.concatenate([base, [interval / INTERVAL_SCALE]])
        y_in = (y - self.y_center) / self.y_scale
        out = forward_batch(self.params, y_in[None, :], x[None, :, :], a[None, :]).data[0]
        return out * self.y_scale + self.y_center


def _stack_tasks(tasks: list[ForecastTask], L: int, H: int):
    y = np.stack([t.history for t in tasks])
    x = np.stack([t.covariates[: L + H] for t in tasks])
    a = np.stack([t.static for t in tasks])
    targets = np.stack([t.target for t in tasks])
    return y, x, a, targets


def _first_nonfinite_block(params: TideParams) -> str | None:
    for name, block in params.named_blocks():
        for p in block.parameters():
            if not np.all(np.isfinite(p.data)):
                return name
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                return name
    return None


def train_tide(tasks: list[ForecastTask], config: TideConfig, *,
               val_fraction: float = 0.2, max_epochs: int = 200,
               batch_size: int = 32, patience: int = PATIENCE,
               outlier_z: float = OUTLIER_Z) -> tuple[TideModel, TrainReport]:
    """Train on a chronologically ordered task list.

    The last ``val_fraction`` of the list is the validation split; no
    sample crosses the boundary.  Every task must carry a target and
    share the same look-back, horizon and feature layout.
    """
    if len(tasks) < 2:
        raise ValidationError("need at least two tasks (train + validation)")
    first = tasks[0]
    L, H, r, s = first.lookback, first.horizon, first.n_covariates, first.static.size
    for k, t in enumerate(tasks):
        if t.target is None:
            raise ValidationError(f"task {k} has no target")
        if (t.lookback, t.horizon, t.n_covariates, t.static.size) != (L, H, r, s):
            raise ValidationError(f"task {k} layout differs from task 0")
    usable_intervals = [v for v in config.interval_set if v <= H]
    if not usable_intervals:
        raise ValidationError(
            f"no interval in {config.interval_set} fits within horizon {H}"
        )

    n_val = max(1, int(round(len(tasks) * val_fraction)))
    n_train = len(tasks) - n_val
    if n_train < 1:
        raise ValidationError("dataset too small for the requested validation fraction")
    train, val = tasks[:n_train], tasks[n_train:]

    cov_rows = np.concatenate([t.covariates[: L + H] for t in train])
    _, scaler = normalize(cov_rows, outlier_z=outlier_z)

    if config.revin:
        y_center, y_scale = 0.0, 1.0
    else:
        pool = np.concatenate([np.concatenate([t.history, t.target]) for t in train])
        y_center = float(pool.mean())
        std = float(pool.std())
        y_scale = std if std > 0 else 1.0

    def prepare(split):
        y, x, a, tgt = _stack_tasks(split, L, H)
        y = (y - y_center) / y_scale
        x = scaler.transform(x)
        return y, x, a, tgt

    y_tr, x_tr, a_tr, tgt_tr = prepare(train)
    y_va, x_va, a_va, tgt_va = prepare(val)

    rng_interval = np.random.default_rng([config.seed, 101])
    rng_shuffle = np.random.default_rng([config.seed, 102])
    rng_dropout = np.random.default_rng([config.seed, 103])
    intervals = np.asarray(usable_intervals)
    val_iv = rng_interval.choice(intervals, size=len(val))
    a_va_full = np.column_stack([a_va, val_iv / INTERVAL_SCALE])
    val_mask = (np.arange(H)[None, :] < val_iv[:, None]).astype(np.float64)

    params = init_tide_params(config, L, H, r, s + 1)
    optimizer = Adam(params.parameters(), lr=config.learning_rate)
    stopper = EarlyStopping(patience=patience)
    best_snapshot = [p.data.copy() for p in params.parameters()]
    curve: list[tuple[float, float]] = []

    def raw_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
        raw = pred * y_scale + y_center if (y_scale != 1.0 or y_center != 0.0) else pred
        return mse(raw, target, mask)

    epochs_run = 0
    for epoch in range(1, max_epochs + 1):
        epochs_run = epoch
        order = rng_shuffle.permutation(n_train)
        train_iv = rng_interval.choice(intervals, size=n_train)
        batch_losses = []
        for b0 in range(0, n_train, batch_size):
            sel = order[b0:b0 + batch_size]
            iv = train_iv[sel]
            a_full = np.column_stack([a_tr[sel], iv / INTERVAL_SCALE])
            mask = (np.arange(H)[None, :] < iv[:, None]).astype(np.float64)
            pred = forward_batch(params, y_tr[sel], x_tr[sel], a_full,
                                 training=True, rng=rng_dropout)
            loss = raw_loss(pred, tgt_tr[sel], mask)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {b0 // batch_size}"
                    + (f" (parameter block '{_first_nonfinite_block(params)}')"
                       if _first_nonfinite_block(params) else ""),
                    epoch=epoch, batch=b0 // batch_size,
                    parameter=_first_nonfinite_block(params),
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(loss_value)

        val_pred = forward_batch(params, y_va, x_va, a_va_full)
        val_loss = float(raw_loss(val_pred, tgt_va, val_mask).data)
        train_loss = float(np.mean(batch_losses))
        curve.append((train_loss, val_loss))
        if stopper.update(val_loss):
            best_snapshot = [p.data.copy() for p in params.parameters()]
        logger.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if stopper.should_stop:
            break

    for p, saved in zip(params.parameters(), best_snapshot):
        p.data[...] = saved

    report = TrainReport(
        epochs_run=epochs_run,
        best_validation_loss=float(stopper.best),
        stopped_early=stopper.should_stop,
        loss_curve=curve,
    )
    model = TideModel(params, scaler, y_center, y_scale)
    return model, report


def gradient_check(params: TideParams, task: ForecastTask, *,
                   n_samples: int = 200, step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error of reverse-mode vs central-difference gradients.

    Runs the forward pass in inference mode (dropout inactive) with the
    plain full-horizon MSE loss.
    """
    if task.target is None:
        raise ValidationError("gradient check task needs a target")
    y = task.history[None, :]
    x = task.covariates[None, : params.lookback + params.horizon]
    a = task.static[None, :]
    target = task.target[None, :]

    def loss_fn():
        return mse(forward_batch(params, y, x, a), target)

    return finite_difference_check(loss_fn, params.parameters(),
                                   n_samples=n_samples, step=step, seed=seed)
