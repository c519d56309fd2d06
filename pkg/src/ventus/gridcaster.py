"""Compact autoregressive grid forecaster and its fine-tuning machinery.

A per-cell MLP with shared parameters maps the two most recent states of
a 3x3 spatial stencil (plus static cell features and optional forcing
covariates) to a residual update of the center cell, so an all-zero
model is exactly the persistence forecaster.  Training minimizes a
spatially weighted squared error with per-variable inverse
time-difference-variance scaling, cosine-latitude area weights
normalized to unit mean, an optional bounding-box up-weight, and derived
wind-magnitude / wind-power channels.  Per-lead-time linear bias
correction post-processes rolled-out forecasts.

The module is hard-wired to the 6-hour step regime.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .core_data import GridSpec, GridStateSequence
from .errors import TrainingDivergedError, ValidationError
from .neural.autodiff import Adam, Tensor, concat, pad_edge_hw, relu, reshape, sqrt, transpose
from .neural.layers import uniform_init

logger = logging.getLogger(__name__)

GRID_STEP_SECONDS = 21600
WIND_MAGNITUDE_CHANNEL = "wm"
WIND_POWER_CHANNEL = "wp"
DEFAULT_WM_WEIGHT = 1.0
DEFAULT_WP_WEIGHT = 0.1  # cubing inflates scale, so the power channel is down-weighted


def area_weights(spec: GridSpec) -> np.ndarray:
    """Cosine-latitude cell weights, normalized to unit mean over the grid."""
    w = np.cos(np.deg2rad(spec.lat_centers))[:, None] * np.ones((1, spec.n_lon))
    return w / w.mean()


def box_mask(spec: GridSpec, box) -> np.ndarray:
    """Boolean mask of cells whose centers fall inside (lat/lon closed) bounds."""
    lat_min, lat_max, lon_min, lon_max = (float(v) for v in box)
    if lat_min > lat_max or lon_min > lon_max:
        raise ValidationError(f"degenerate bounding box {box}")
    lat_in = (spec.lat_centers >= lat_min) & (spec.lat_centers <= lat_max)
    lon_in = (spec.lon_centers >= lon_min) & (spec.lon_centers <= lon_max)
    mask = lat_in[:, None] & lon_in[None, :]
    if not mask.any():
        raise ValidationError(f"bounding box {box} contains no grid cells")
    return mask


def default_box(spec: GridSpec, fraction: float = 0.25) -> tuple[float, float, float, float]:
    """A centered box covering roughly ``fraction`` of the grid cells."""
    side = np.sqrt(fraction)
    ni = max(1, int(round(spec.n_lat * side)))
    nj = max(1, int(round(spec.n_lon * side)))
    i0 = (spec.n_lat - ni) // 2
    j0 = (spec.n_lon - nj) // 2
    lat = spec.lat_centers
    lon = spec.lon_centers
    return (float(lat[i0]), float(lat[i0 + ni - 1]), float(lon[j0]), float(lon[j0 + nj - 1]))


def wind_derivations(u10, v10) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise wind magnitude sqrt(u^2 + v^2) and its cube."""
    u = np.asarray(u10, dtype=np.float64)
    v = np.asarray(v10, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"component shapes differ: {u.shape} vs {v.shape}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValidationError("wind components contain non-finite values")
    wm = np.hypot(u, v)
    return wm, wm ** 3


def estimate_s_j(training: GridStateSequence) -> np.ndarray:
    """Inverse variance of one-step time differences, per variable."""
    data = np.asarray(training.data, dtype=np.float64)
    if data.shape[0] < 3:
        raise ValidationError("need at least 3 time steps to estimate difference variances")
    diffs = data[1:] - data[:-1]
    out = np.empty(training.spec.n_variables)
    for j, name in enumerate(training.spec.variables):
        var = diffs[:, j].var()
        if var == 0:
            raise ValidationError(f"variable '{name}' has zero time-difference variance")
        out[j] = 1.0 / var
    return out


@dataclass(frozen=True)
class LossConfig:
    """Resolved weights for the spatially weighted squared-error loss.

    ``channels`` lists the loss channels in order: the grid's base
    variables, optionally followed by derived ``wm``/``wp`` channels
    computed from the 10 m wind components.  ``channel_weights`` and
    ``inv_diff_variance`` align with ``channels``; for the derived
    channels the weights are the wind-magnitude/power weights.
    """

    base_variables: tuple[str, ...]
    channels: tuple[str, ...]
    channel_weights: np.ndarray
    inv_diff_variance: np.ndarray
    area: np.ndarray
    box: tuple[float, float, float, float] | None
    box_weight: float
    in_box: np.ndarray | None
    rollout_steps: int = 4
    u_index: int | None = None
    v_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channel_weights",
                           np.asarray(self.channel_weights, dtype=np.float64))
        object.__setattr__(self, "inv_diff_variance",
                           np.asarray(self.inv_diff_variance, dtype=np.float64))
        object.__setattr__(self, "area", np.asarray(self.area, dtype=np.float64))
        n = len(self.channels)
        if self.channel_weights.shape != (n,) or self.inv_diff_variance.shape != (n,):
            raise ValidationError("channel weight arrays must align with channels")
        if np.any(self.inv_diff_variance <= 0):
            raise ValidationError("inverse difference variances must be positive")
        if np.any(self.channel_weights < 0):
            raise ValidationError("channel weights must be non-negative")
        if abs(self.area.mean() - 1.0) > 1e-12:
            raise ValidationError("area weights must have unit mean over the grid")
        if self.box_weight < 1.0:
            raise ValidationError("box up-weight must be >= 1")
        if self.rollout_steps < 1:
            raise ValidationError("rollout_steps must be >= 1")
        has_derived = len(self.channels) > len(self.base_variables)
        if has_derived and (self.u_index is None or self.v_index is None):
            raise ValidationError("derived wind channels need u/v component indices")

    @property
    def cell_weight(self) -> np.ndarray:
        m = np.ones_like(self.area)
        if self.in_box is not None:
            m = np.where(self.in_box, self.box_weight, 1.0)
        return self.area * m


def make_loss_config(data: GridStateSequence, *, box=None, box_weight: float = 1.0,
                     wind_magnitude_weight: float = DEFAULT_WM_WEIGHT,
                     wind_power_weight: float = DEFAULT_WP_WEIGHT,
                     variable_weights=None, rollout_steps: int = 4,
                     u_variable: str = "u10", v_variable: str = "v10") -> LossConfig:
    """Build a loss configuration from a training sequence.

    Derived wind channels are appended when both components are present
    and either wind weight is positive; their inverse difference
    variances are estimated from the derived training fields.
    """
    spec = data.spec
    base = spec.variables
    weights = np.ones(len(base)) if variable_weights is None else np.asarray(variable_weights, float)
    if weights.shape != (len(base),):
        raise ValidationError("variable_weights must align with the grid's variables")
    s = estimate_s_j(data)

    channels = list(base)
    w_list = list(weights)
    s_list = list(s)
    u_idx = v_idx = None
    wants_wind = (wind_magnitude_weight > 0 or wind_power_weight > 0)
    if wants_wind and u_variable in base and v_variable in base:
        u_idx = spec.variable_index(u_variable)
        v_idx = spec.variable_index(v_variable)
        arr = np.asarray(data.data, dtype=np.float64)
        wm, wp = wind_derivations(arr[:, u_idx], arr[:, v_idx])
        for name, field, weight in ((WIND_MAGNITUDE_CHANNEL, wm, wind_magnitude_weight),
                                    (WIND_POWER_CHANNEL, wp, wind_power_weight)):
            var = np.diff(field, axis=0).var()
            if var == 0:
                raise ValidationError(f"derived channel '{name}' has zero difference variance")
            channels.append(name)
            w_list.append(weight)
            s_list.append(1.0 / var)

    in_box = box_mask(spec, box) if box is not None else None
    return LossConfig(
        base_variables=base,
        channels=tuple(channels),
        channel_weights=np.asarray(w_list),
        inv_diff_variance=np.asarray(s_list),
        area=area_weights(spec),
        box=tuple(float(v) for v in box) if box is not None else None,
        box_weight=float(box_weight),
        in_box=in_box,
        rollout_steps=rollout_steps,
        u_index=u_idx,
        v_index=v_idx,
    )


def _to_5d(arr, n_vars: int, grid_shape) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3:
        a = a[None, None]
    elif a.ndim == 4:
        a = a[None]
    if a.ndim != 5 or a.shape[2] != n_vars or a.shape[3:] != grid_shape:
        raise ValidationError(
            f"expected state shape [batch][steps][{n_vars}]{list(grid_shape)}, got {np.shape(arr)}"
        )
    return a


def weighted_loss(pred, target, config: LossConfig):
    """Spatially weighted squared error over batch, rollout, cells and channels.

    ``pred``/``target`` may be ndarrays or Tensors shaped ``[C, h, w]``,
    ``[T, C, h, w]`` or ``[B, T, C, h, w]`` over the base variables;
    derived channels are computed internally.  Returns a float for
    ndarray input and a Tensor when ``pred`` participates in a graph.
    """
    is_tensor = isinstance(pred, Tensor)
    grid_shape = config.area.shape
    n_base = len(config.base_variables)
    if is_tensor:
        p = pred
        if p.ndim == 3:
            p = reshape(p, (1, 1) + p.shape)
        elif p.ndim == 4:
            p = reshape(p, (1,) + p.shape)
        if p.ndim != 5 or p.shape[2] != n_base or p.shape[3:] != grid_shape:
            raise ValidationError(f"prediction shape {pred.shape} does not match the grid")
    else:
        p = Tensor(_to_5d(pred, n_base, grid_shape))
    t = _to_5d(target, n_base, grid_shape)
    if p.shape != t.shape:
        raise ValidationError(f"prediction shape {p.shape} != target shape {t.shape}")

    batch, steps = p.shape[0], p.shape[1]
    cellw = config.cell_weight
    n_cells = cellw.size

    def channel_fields(state, idx_or_name):
        if isinstance(idx_or_name, int):
            return state[:, :, idx_or_name, :, :]
        u = state[:, :, config.u_index, :, :]
        v = state[:, :, config.v_index, :, :]
        if isinstance(state, Tensor):
            wm = sqrt(u * u + v * v)
        else:
            wm = np.hypot(u, v)
        return wm if idx_or_name == WIND_MAGNITUDE_CHANNEL else wm ** 3

    total = None
    for c, name in enumerate(config.channels):
        key = c if c < n_base else name
        err = channel_fields(p, key) - channel_fields(t, key)
        term = (err * err * cellw).sum()
        term = term * float(config.inv_diff_variance[c] * config.channel_weights[c])
        total = term if total is None else total + term
    loss = total * (1.0 / (batch * steps * n_cells))
    return loss if is_tensor else float(loss.data)


# ---------------------------------------------------------------------------
# Forecaster
# ---------------------------------------------------------------------------

STENCIL = [(di, dj) for di in range(3) for dj in range(3)]
N_STATIC_FEATURES = 3  # normalized lat, normalized lon, land-mask placeholder


class GridForecaster:
    """Per-cell shared MLP over a 3x3 stencil of the two most recent states."""

    def __init__(self, spec: GridSpec, *, hidden: int = 64, seed: int = 0,
                 in_mean=None, in_std=None, diff_std=None):
        if spec.dt != GRID_STEP_SECONDS:
            raise ValidationError(f"grid forecaster requires dt={GRID_STEP_SECONDS} s, got {spec.dt}")
        self.spec = spec
        self.hidden = int(hidden)
        self.seed = int(seed)
        nv = spec.n_variables
        self.in_mean = np.zeros(nv) if in_mean is None else np.asarray(in_mean, float)
        self.in_std = np.ones(nv) if in_std is None else np.asarray(in_std, float)
        self.diff_std = np.ones(nv) if diff_std is None else np.asarray(diff_std, float)
        for name, arr in (("in_mean", self.in_mean), ("in_std", self.in_std),
                          ("diff_std", self.diff_std)):
            if arr.shape != (nv,):
                raise ValidationError(f"{name} must have one entry per variable")
        if np.any(self.in_std <= 0) or np.any(self.diff_std <= 0):
            raise ValidationError("normalization scales must be positive")

        lat = spec.lat_centers
        lon = spec.lon_centers
        lat_n = (2 * (lat - lat.min()) / max(lat.max() - lat.min(), 1e-12) - 1)[:, None]
        lon_n = (2 * (lon - lon.min()) / max(lon.max() - lon.min(), 1e-12) - 1)[None, :]
        self.statics = np.stack([
            np.broadcast_to(lat_n, (spec.n_lat, spec.n_lon)),
            np.broadcast_to(lon_n, (spec.n_lat, spec.n_lon)),
            np.zeros((spec.n_lat, spec.n_lon)),
        ])

        self.forcing_names: tuple[str, ...] = ()
        self.forcing_mean = np.zeros(0)
        self.forcing_std = np.ones(0)

        rng = np.random.default_rng(seed)
        base_in = 2 * 9 * nv + N_STATIC_FEATURES
        self.w_in = Tensor(uniform_init(rng, base_in, (base_in, hidden)))
        self.b_in = Tensor(uniform_init(rng, base_in, (hidden,)))
        self.w_forcing = Tensor(np.zeros((0, hidden)))
        self.w_mid = Tensor(uniform_init(rng, hidden, (hidden, hidden)))
        self.b_mid = Tensor(uniform_init(rng, hidden, (hidden,)))
        self.w_out = Tensor(uniform_init(rng, hidden, (hidden, nv)))
        self.b_out = Tensor(uniform_init(rng, hidden, (nv,)))

    @property
    def n_variables(self) -> int:
        return self.spec.n_variables

    def parameters(self) -> list[Tensor]:
        params = [self.w_in, self.b_in, self.w_mid, self.b_mid, self.w_out, self.b_out]
        if self.w_forcing.shape[0]:
            params.append(self.w_forcing)
        return params

    def zero_(self):
        for p in [self.w_in, self.b_in, self.w_forcing, self.w_mid, self.b_mid,
                  self.w_out, self.b_out]:
            p.data[...] = 0.0

    def _rows(self, prev, cur, forcing):
        """Stencil + static (+forcing) feature rows, shape [B*h*w, features]."""
        h, w = self.spec.n_lat, self.spec.n_lon
        batch = cur.shape[0]
        mean = self.in_mean[None, :, None, None]
        std = self.in_std[None, :, None, None]
        z = concat([(prev - mean) * (1.0 / std), (cur - mean) * (1.0 / std)], axis=1)
        padded = pad_edge_hw(z)
        shifted = concat(
            [padded[:, :, di:di + h, dj:dj + w] for di, dj in STENCIL], axis=1
        )
        statics = np.broadcast_to(self.statics[None], (batch,) + self.statics.shape)
        feats = concat([shifted, Tensor(statics)], axis=1)
        base_rows = reshape(transpose(feats, (0, 2, 3, 1)), (batch * h * w, feats.shape[1]))
        if forcing is None:
            if self.forcing_names:
                raise ValidationError(
                    f"model expects forcing inputs {self.forcing_names} but none were given"
                )
            return base_rows, None
        forcing = np.asarray(forcing, dtype=np.float64)
        expected = (batch, len(self.forcing_names), h, w)
        if forcing.shape != expected:
            raise ValidationError(f"forcing shape {forcing.shape} != {expected}")
        fz = (forcing - self.forcing_mean[None, :, None, None]) / self.forcing_std[None, :, None, None]
        forcing_rows = fz.transpose(0, 2, 3, 1).reshape(batch * h * w, len(self.forcing_names))
        return base_rows, forcing_rows

    def step(self, prev, cur, forcing=None) -> Tensor:
        """One 6-hour update: returns the next state as ``cur + residual``.

        ``prev``/``cur`` are ``[V, h, w]`` or ``[B, V, h, w]`` (ndarray or
        Tensor); forcing, when the model has forcing inputs, is
        ``[B, F, h, w]`` ndarray for the predicted step.
        """
        prev_t = prev if isinstance(prev, Tensor) else Tensor(np.asarray(prev, np.float64))
        cur_t = cur if isinstance(cur, Tensor) else Tensor(np.asarray(cur, np.float64))
        squeeze = False
        if prev_t.ndim == 3:
            prev_t = reshape(prev_t, (1,) + prev_t.shape)
            cur_t = reshape(cur_t, (1,) + cur_t.shape)
            if forcing is not None and np.ndim(forcing) == 3:
                forcing = np.asarray(forcing)[None]
            squeeze = True
        nv, h, w = self.n_variables, self.spec.n_lat, self.spec.n_lon
        if cur_t.shape[1:] != (nv, h, w) or prev_t.shape != cur_t.shape:
            raise ValidationError(
                f"state shapes {prev_t.shape}/{cur_t.shape} do not match grid [{nv}, {h}, {w}]"
            )
        batch = cur_t.shape[0]

        base_rows, forcing_rows = self._rows(prev_t, cur_t, forcing)
        pre = base_rows @ self.w_in + self.b_in
        if forcing_rows is not None:
            # separate matmul keeps zero-initialized forcing weights bit-exact
            pre = pre + Tensor(forcing_rows) @ self.w_forcing
        hidden = relu(pre)
        hidden = relu(hidden @ self.w_mid + self.b_mid)
        resid = hidden @ self.w_out + self.b_out
        resid = transpose(reshape(resid, (batch, h, w, nv)), (0, 3, 1, 2))
        out = cur_t + resid * self.diff_std[None, :, None, None]
        return reshape(out, (nv, h, w)) if squeeze else out

    def rollout(self, prev, cur, n_steps: int, forcing_seq=None) -> list[Tensor]:
        """Autoregressive rollout of ``n_steps`` Tensors (gradients flow through)."""
        states = []
        p, c = prev, cur
        for k in range(n_steps):
            forcing = None if forcing_seq is None else forcing_seq[:, k]
            nxt = self.step(p, c, forcing)
            states.append(nxt)
            p, c = c, nxt
        return states

    def predict_rollout(self, prev, cur, n_steps: int, forcing_seq=None) -> np.ndarray:
        """Rollout without gradients; returns ``[n_steps, V, h, w]`` (single init)."""
        prev = np.asarray(prev, np.float64)[None]
        cur = np.asarray(cur, np.float64)[None]
        if forcing_seq is not None:
            forcing_seq = np.asarray(forcing_seq, np.float64)[None]
        states = self.rollout(prev, cur, n_steps, forcing_seq)
        return np.stack([s.data[0] for s in states])


def build_grid_forecaster(data: GridStateSequence, *, hidden: int = 64,
                          seed: int = 0) -> GridForecaster:
    """Construct a forecaster with normalization statistics from training data."""
    arr = np.asarray(data.data, dtype=np.float64)
    in_mean = arr.mean(axis=(0, 2, 3))
    in_std = arr.std(axis=(0, 2, 3))
    in_std[in_std == 0] = 1.0
    diff_std = (arr[1:] - arr[:-1]).std(axis=(0, 2, 3))
    diff_std[diff_std == 0] = 1.0
    return GridForecaster(data.spec, hidden=hidden, seed=seed,
                          in_mean=in_mean, in_std=in_std, diff_std=diff_std)


@dataclass
class RolloutTrainReport:
    steps: int
    loss_history: list[float]


def rollout_train(model: GridForecaster, data: GridStateSequence, config: LossConfig,
                  steps: int, seed: int = 0, *, batch_size: int = 4,
                  learning_rate: float = 1e-3,
                  forcing_provider=None) -> tuple[GridForecaster, RolloutTrainReport]:
    """Train with autoregressive rollouts of ``config.rollout_steps`` steps.

    Start times are sampled uniformly; the model's own outputs feed the
    later rollout steps.  ``forcing_provider(times)`` may supply
    ``[B, T_train, F, h, w]`` forcing arrays for models with forcing
    inputs.  Returns the (mutated) model and the per-step loss history.
    """
    if model.spec.dt != GRID_STEP_SECONDS or data.spec.dt != GRID_STEP_SECONDS:
        raise ValidationError("rollout training is defined on the 6-hour step grid")
    if data.spec.variables != model.spec.variables:
        raise ValidationError("training data variables do not match the model")
    arr = np.asarray(data.data, dtype=np.float64)
    t_train = config.rollout_steps
    n_times = arr.shape[0]
    if n_times < t_train + 2:
        raise ValidationError(
            f"sequence of {n_times} states too short for {t_train}-step rollouts"
        )
    rng = np.random.default_rng([seed, 301])
    optimizer = Adam(model.parameters(), lr=learning_rate)
    history: list[float] = []
    for step_idx in range(steps):
        inits = rng.integers(1, n_times - t_train, size=batch_size)
        prev = arr[inits - 1]
        cur = arr[inits]
        targets = np.stack([arr[t + 1:t + 1 + t_train] for t in inits])
        forcing_seq = None
        if forcing_provider is not None:
            forcing_seq = forcing_provider(inits, t_train)
        states = model.rollout(Tensor(prev), Tensor(cur), t_train, forcing_seq)
        preds = concat([reshape(s, (batch_size, 1) + s.shape[1:]) for s in states], axis=1)
        loss = weighted_loss(preds, targets, config)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite rollout loss at training step {step_idx}", step=step_idx
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(value)
    logger.debug("rollout training: %d steps, final loss %.6g", steps, history[-1] if history else np.nan)
    return model, RolloutTrainReport(steps=steps, loss_history=history)


def add_forcing_inputs(model: GridForecaster, names, *, means=None, stds=None) -> GridForecaster:
    """Extend the input layer with zero-weight forcing covariates.

    The extended model's outputs are bit-identical to the original on any
    input until the new weights are trained.  An empty name list returns
    the model unchanged.
    """
    names = tuple(str(n) for n in names)
    if not names:
        return model
    if len(set(names)) != len(names):
        raise ValidationError("duplicate forcing names in request")
    clash = [n for n in names if n in model.forcing_names]
    if clash:
        raise ValidationError(f"forcing input(s) already present: {', '.join(clash)}")

    extended = GridForecaster(
        model.spec, hidden=model.hidden, seed=model.seed,
        in_mean=model.in_mean, in_std=model.in_std, diff_std=model.diff_std,
    )
    for src, dst in zip(
        (model.w_in, model.b_in, model.w_mid, model.b_mid, model.w_out, model.b_out),
        (extended.w_in, extended.b_in, extended.w_mid, extended.b_mid,
         extended.w_out, extended.b_out),
    ):
        dst.data[...] = src.data
    extended.forcing_names = model.forcing_names + names
    n_new = len(names)
    means = np.zeros(n_new) if means is None else np.asarray(means, float)
    stds = np.ones(n_new) if stds is None else np.asarray(stds, float)
    if means.shape != (n_new,) or stds.shape != (n_new,) or np.any(stds <= 0):
        raise ValidationError("forcing means/stds must align with names and have positive scale")
    extended.forcing_mean = np.concatenate([model.forcing_mean, means])
    extended.forcing_std = np.concatenate([model.forcing_std, stds])
    extended.w_forcing = Tensor(np.vstack([
        model.w_forcing.data,
        np.zeros((n_new, model.hidden)),
    ]))
    return extended


# ---------------------------------------------------------------------------
# Forecast archives and bias correction
# ---------------------------------------------------------------------------

def forecast_archive(model: GridForecaster, data: GridStateSequence, *,
                     n_leads: int, stride: int = 1,
                     forcing_for_init=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll out from every eligible init; returns (inits, raw, targets).

    ``raw``/``targets`` have shape [n_inits, n_leads, V, h, w]; lead ``k``
    (0-based) is ``6*(k+1)`` hours.
    """
    arr = np.asarray(data.data, dtype=np.float64)
    n_times = arr.shape[0]
    last_init = n_times - 1 - n_leads
    if last_init < 1:
        raise ValidationError(f"sequence too short for {n_leads}-step archives")
    inits = np.arange(1, last_init + 1, stride)
    raws = []
    targets = []
    for t in inits:
        forcing_seq = None if forcing_for_init is None else forcing_for_init(int(t), n_leads)
        raws.append(model.predict_rollout(arr[t - 1], arr[t], n_leads, forcing_seq))
        targets.append(arr[t + 1:t + 1 + n_leads])
    return inits, np.stack(raws), np.stack(targets)


def append_wind_channels(states: np.ndarray, u_index: int, v_index: int) -> np.ndarray:
    """Append wm/wp channels along the variable axis (axis -3)."""
    wm, wp = wind_derivations(
        np.take(states, u_index, axis=-3), np.take(states, v_index, axis=-3)
    )
    return np.concatenate(
        [states, np.expand_dims(wm, -3), np.expand_dims(wp, -3)], axis=-3
    )


def extract_cells(fields: np.ndarray, cells) -> np.ndarray:
    """Gather [..., h, w] fields at (i, j) cells -> [..., n_cells]."""
    ii = np.array([c[0] for c in cells])
    jj = np.array([c[1] for c in cells])
    return fields[..., ii, jj]


@dataclass(frozen=True)
class BiasModel:
    """Per-(lead, variable, cell) affine correction ``alpha + beta * raw``."""

    lead_hours: tuple[int, ...]
    variables: tuple[str, ...]
    cells: tuple[tuple[int, int], ...]
    alpha: np.ndarray  # [n_leads, n_variables, n_cells]
    beta: np.ndarray

    def __post_init__(self):
        leads = tuple(int(v) for v in self.lead_hours)
        expected = tuple(6 * (k + 1) for k in range(len(leads)))
        if leads != expected:
            raise ValidationError(
                f"lead hours must be every 6 h up to the maximum; got {leads}"
            )
        object.__setattr__(self, "lead_hours", leads)
        shape = (len(leads), len(self.variables), len(self.cells))
        alpha = np.asarray(self.alpha, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        if alpha.shape != shape or beta.shape != shape:
            raise ValidationError(f"alpha/beta must have shape {shape}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "cells", tuple((int(i), int(j)) for i, j in self.cells))

    def _indices(self, lead_h: int, variable: str) -> tuple[int, int]:
        if lead_h not in self.lead_hours:
            raise ValidationError(f"bias model has no lead {lead_h} h")
        if variable not in self.variables:
            raise ValidationError(f"bias model has no variable '{variable}'")
        return self.lead_hours.index(lead_h), self.variables.index(variable)


def fit_bias_correction(raw: np.ndarray, targets: np.ndarray, *,
                        variables, cells) -> BiasModel:
    """Per-(lead, variable, cell) OLS of target on raw forecast.

    ``raw``/``targets`` have shape [n_samples, n_leads, n_variables,
    n_cells] with at least 3 samples.  A constant raw predictor falls
    back to an intercept-only fit (beta 0, alpha mean target) with a
    warning.
    """
    raw = np.asarray(raw, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if raw.shape != targets.shape or raw.ndim != 4:
        raise ValidationError("raw and target archives must share shape [S, L, V, C]")
    n_samples, n_leads, n_vars, n_cells = raw.shape
    if n_samples < 3:
        raise ValidationError("need at least 3 forecast/target pairs per regression")
    if n_vars != len(tuple(variables)) or n_cells != len(tuple(cells)):
        raise ValidationError("archive axes must match the declared variables/cells")

    mean_raw = raw.mean(axis=0)
    mean_tgt = targets.mean(axis=0)
    var_raw = ((raw - mean_raw) ** 2).mean(axis=0)
    cov = ((raw - mean_raw) * (targets - mean_tgt)).mean(axis=0)
    constant = var_raw <= 0
    if np.any(constant):
        warnings.warn(
            f"{int(constant.sum())} constant raw predictor(s); using intercept-only fits",
            stacklevel=2,
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(constant, 0.0, cov / np.where(constant, 1.0, var_raw))
    alpha = mean_tgt - beta * mean_raw
    return BiasModel(
        lead_hours=tuple(6 * (k + 1) for k in range(n_leads)),
        variables=tuple(variables),
        cells=tuple(cells),
        alpha=alpha,
        beta=beta,
    )


def apply_bias_correction(raw, bias: BiasModel, *, lead_hours: int, variable: str) -> np.ndarray:
    """Apply the affine correction for one (lead, variable) over the box cells.

    ``raw`` has shape [..., n_cells]; missing keys raise a validation
    error naming the offender.
    """
    li, vi = bias._indices(int(lead_hours), variable)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != len(bias.cells):
        raise ValidationError(
            f"raw last axis {raw.shape[-1]} != {len(bias.cells)} correction cells"
        )
    return bias.alpha[li, vi] + bias.beta[li, vi] * raw
