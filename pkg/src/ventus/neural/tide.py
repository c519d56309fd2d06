"""MLP encoder-decoder forecaster with dense covariate projection.

The forward pass, per instance: project each covariate row through a
residual block; flatten history, projected covariates and static
attributes into the encoder stack; decode the latent vector into one
small vector per horizon step; combine each step vector with that step's
projected covariates in a temporal decoder; add a global linear skip
from the history.  With reversible instance normalization (RevIN)
enabled, the history is normalized per instance on the way in and the
prediction is denormalized on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .autodiff import Tensor, concat, reshape, take
from .layers import Linear, ResidualBlock

HIDDEN_SIZES = (256, 512, 1024)
LAYER_COUNTS = (1, 2, 3)
DECODER_OUTPUT_DIMS = (4, 8, 16, 32)
TEMPORAL_HIDDEN_SIZES = (32, 64, 128)
DROPOUT_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.5)
LEARNING_RATE_RANGE = (1e-5, 1e-2)
ALLOWED_INTERVALS = (6, 12, 24, 48)
INTERVAL_SCALE = 48.0
REVIN_EPS = 1e-8


@dataclass(frozen=True)
class TideConfig:
    """Hyperparameters; by default each field must sit in its tuning range.

    ``check_ranges=False`` turns the range check off (used by the compact
    preset); structural validation always applies.
    """

    hidden_size: int = 256
    n_encoder_layers: int = 1
    n_decoder_layers: int = 1
    decoder_output_dim: int = 4
    temporal_decoder_hidden: int = 32
    dropout: float = 0.1
    layer_norm: bool = True
    learning_rate: float = 1e-3
    revin: bool = True
    interval_set: tuple[int, ...] = (6, 12, 24, 48)
    seed: int = 0
    check_ranges: bool = True

    def __post_init__(self):
        object.__setattr__(self, "interval_set", tuple(sorted(set(int(v) for v in self.interval_set))))
        if not self.interval_set:
            raise ValidationError("interval_set must not be empty")
        bad = [v for v in self.interval_set if v not in ALLOWED_INTERVALS]
        if bad:
            raise ValidationError(f"interval_set entries {bad} not in {ALLOWED_INTERVALS}")
        if min(self.hidden_size, self.n_encoder_layers, self.n_decoder_layers,
               self.decoder_output_dim, self.temporal_decoder_hidden) < 1:
            raise ValidationError("layer sizes and counts must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValidationError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if not self.check_ranges:
            return
        checks = (
            ("hidden_size", self.hidden_size, HIDDEN_SIZES),
            ("n_encoder_layers", self.n_encoder_layers, LAYER_COUNTS),
            ("n_decoder_layers", self.n_decoder_layers, LAYER_COUNTS),
            ("decoder_output_dim", self.decoder_output_dim, DECODER_OUTPUT_DIMS),
            ("temporal_decoder_hidden", self.temporal_decoder_hidden, TEMPORAL_HIDDEN_SIZES),
            ("dropout", self.dropout, DROPOUT_LEVELS),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                raise ValidationError(f"{name}={value} outside tuning range {allowed}")
        lo, hi = LEARNING_RATE_RANGE
        if not (lo <= self.learning_rate <= hi):
            raise ValidationError(f"learning_rate={self.learning_rate} outside [{lo}, {hi}]")

    @classmethod
    def compact(cls, **overrides) -> "TideConfig":
        """Small preset: four 128-wide residual blocks per stack, dropout 0.1."""
        base = dict(
            hidden_size=128,
            n_encoder_layers=4,
            n_decoder_layers=4,
            decoder_output_dim=8,
            temporal_decoder_hidden=128,
            dropout=0.1,
            learning_rate=1e-3,
            check_ranges=False,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class ForecastTask:
    """One forecasting instance.

    ``covariates`` must cover at least the look-back plus the horizon
    (more rows are allowed, e.g. for iterative rolling); ``target`` is
    required for training and absent at inference.
    """

    history: np.ndarray
    covariates: np.ndarray
    static: np.ndarray = field(default_factory=lambda: np.zeros(0))
    horizon: int = 24
    target: np.ndarray | None = None

    def __post_init__(self):
        hist = np.asarray(self.history, dtype=np.float64)
        cov = np.asarray(self.covariates, dtype=np.float64)
        stat = np.asarray(self.static, dtype=np.float64)
        if hist.ndim != 1 or hist.size < 1:
            raise ValidationError("history must be a non-empty 1-D array")
        if cov.ndim != 2 or cov.shape[1] < 1:
            raise ValidationError("covariates must be 2-D with at least one column")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if cov.shape[0] < hist.size + self.horizon:
            raise ValidationError(
                f"covariates cover {cov.shape[0]} steps, need >= lookback+horizon = "
                f"{hist.size + self.horizon}"
            )
        if stat.ndim != 1:
            raise ValidationError("static attributes must be 1-D")
        for name, arr in (("history", hist), ("covariates", cov), ("static", stat)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        tgt = self.target
        if tgt is not None:
            tgt = np.asarray(tgt, dtype=np.float64)
            if tgt.shape != (self.horizon,):
                raise ValidationError(f"target shape {tgt.shape} != (horizon,) = ({self.horizon},)")
            if not np.all(np.isfinite(tgt)):
                raise ValidationError("target contains non-finite values")
        object.__setattr__(self, "history", hist)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "static", stat)
        object.__setattr__(self, "target", tgt)

    @property
    def lookback(self) -> int:
        return int(self.history.size)

    @property
    def n_covariates(self) -> int:
        return int(self.covariates.shape[1])


class TideParams:
    """All trainable blocks plus the shape contract they were built for."""

    def __init__(self, config: TideConfig, lookback: int, horizon: int,
                 n_covariates: int, n_static: int):
        if min(lookback, horizon, n_covariates) < 1 or n_static < 0:
            raise ValidationError("invalid dimensions for model construction")
        self.config = config
        self.lookback = lookback
        self.horizon = horizon
        self.n_covariates = n_covariates
        self.n_static = n_static

        rng = np.random.default_rng(config.seed)
        p = config.decoder_output_dim
        hid = config.hidden_size
        ln = config.layer_norm
        drop = config.dropout

        self.feature_proj = ResidualBlock(n_covariates, p, hid, drop, ln, rng)
        enc_in = lookback + (lookback + horizon) * p + n_static
        self.encoder = []
        for k in range(config.n_encoder_layers):
            self.encoder.append(ResidualBlock(enc_in if k == 0 else hid, hid, hid, drop, ln, rng))
        self.decoder = []
        for k in range(config.n_decoder_layers):
            out = p * horizon if k == config.n_decoder_layers - 1 else hid
            self.decoder.append(ResidualBlock(hid, out, hid, drop, ln, rng))
        self.temporal = ResidualBlock(2 * p, 1, config.temporal_decoder_hidden, drop, ln, rng)
        self.skip = Linear(lookback, horizon, rng)

    def parameters(self) -> list[Tensor]:
        params = self.feature_proj.parameters()
        for block in self.encoder + self.decoder:
            params += block.parameters()
        params += self.temporal.parameters()
        params += self.skip.parameters()
        return params

    def named_blocks(self):
        yield "feature_proj", self.feature_proj
        for k, block in enumerate(self.encoder):
            yield f"encoder.{k}", block
        for k, block in enumerate(self.decoder):
            yield f"decoder.{k}", block
        yield "temporal", self.temporal
        yield "skip", self.skip

    def zero_(self):
        """Set every parameter (including layer-norm gains) to zero."""
        for p in self.parameters():
            p.data[...] = 0.0


def init_tide_params(config: TideConfig, lookback: int, horizon: int,
                     n_covariates: int, n_static: int = 0) -> TideParams:
    return TideParams(config, lookback, horizon, n_covariates, n_static)


def _as_batch(arr, ndim_single: int):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == ndim_single:
        return arr[None, ...], True
    return arr, False


def forward_batch(params: TideParams, y: np.ndarray, x: np.ndarray,
                  a: np.ndarray | None = None, *, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Batched forward pass; returns a [B, horizon] Tensor.

    Shapes are checked against the construction contract before any
    arithmetic runs.
    """
    cfg = params.config
    L, H, r, s = params.lookback, params.horizon, params.n_covariates, params.n_static
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != L:
        raise ValidationError(f"history batch shape {y.shape} != [B, {L}]")
    B = y.shape[0]
    if x.shape != (B, L + H, r):
        raise ValidationError(f"covariate batch shape {x.shape} != [{B}, {L + H}, {r}]")
    if s == 0:
        a = np.zeros((B, 0)) if a is None else np.asarray(a, dtype=np.float64)
    else:
        a = np.asarray(a, dtype=np.float64) if a is not None else None
    if a is None or a.shape != (B, s):
        raise ValidationError(f"static batch shape {None if a is None else a.shape} != [{B}, {s}]")
    if training and cfg.dropout > 0 and rng is None:
        raise ValidationError("training-mode forward with dropout needs an rng")

    if cfg.revin:
        mu = y.mean(axis=1, keepdims=True)
        sigma = y.std(axis=1, keepdims=True) + REVIN_EPS
        y_in = (y - mu) / sigma
    else:
        y_in = y

    p = cfg.decoder_output_dim
    x_flat = Tensor(x.reshape(B * (L + H), r))
    x_proj = params.feature_proj(x_flat, training, rng)            # [B(L+H), p]
    x_proj_rows = reshape(x_proj, (B, (L + H) * p))
    enc_in = concat([Tensor(y_in), x_proj_rows, Tensor(a)], axis=1)

    e = enc_in
    for block in params.encoder:
        e = block(e, training, rng)
    g = e
    for block in params.decoder:
        g = block(g, training, rng)

    d_steps = reshape(g, (B * H, p))
    future = take(reshape(x_proj, (B, L + H, p)), (slice(None), slice(L, L + H), slice(None)))
    future = reshape(future, (B * H, p))
    temporal_out = params.temporal(concat([d_steps, future], axis=1), training, rng)
    out = reshape(temporal_out, (B, H)) + params.skip(Tensor(y_in))

    if cfg.revin:
        out = out * Tensor(sigma) + Tensor(mu)
    return out


def tide_forward(params: TideParams, history, covariates, static=None, *,
                 training: bool = False,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Forward pass for a single instance or a batch; returns an ndarray.

    Single-instance input: ``history`` [L], ``covariates`` [>=L+H, r],
    ``static`` [s].  Extra covariate rows beyond L+H are ignored.
    """
    y, single = _as_batch(history, 1)
    x, _ = _as_batch(np.asarray(covariates, dtype=np.float64), 2)
    L, H = params.lookback, params.horizon
    if x.shape[1] > L + H:
        x = x[:, : L + H, :]
    if static is None:
        a = None
    else:
        a, _ = _as_batch(static, 1)
    out = forward_batch(params, y, x, a, training=training, rng=rng).data
    return out[0] if single else out


def task_forward(params: TideParams, task: ForecastTask, *, training: bool = False,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    return tide_forward(params, task.history, task.covariates, task.static,
                        training=training, rng=rng)
