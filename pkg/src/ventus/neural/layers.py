"""Dense layers, residual blocks and layer normalization.

Initialization is uniform with fan-in scaling, drawn from the generator
passed at construction time, so parameter values are a pure function of
the seed and the construction order.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, dropout, relu, sqrt


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)))
        self.b = Tensor(uniform_init(rng, in_dim, (out_dim,)))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (1.0 / sqrt(var + eps)) * gain + bias


class ResidualBlock:
    """dense -> ReLU -> dense (+dropout) with a skip connection.

    The skip is the identity when shapes agree, otherwise a linear
    projection.  Optional layer normalization is applied to the sum.
    Dropout only acts when ``training`` is set.
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int,
                 dropout_rate: float, use_layer_norm: bool,
                 rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim, rng)
        self.skip = Linear(in_dim, out_dim, rng) if in_dim != out_dim else None
        self.dropout_rate = dropout_rate
        if use_layer_norm:
            self.ln_gain = Tensor(np.ones(out_dim))
            self.ln_bias = Tensor(np.zeros(out_dim))
        else:
            self.ln_gain = None
            self.ln_bias = None

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = self.fc2(relu(self.fc1(x)))
        if training and self.dropout_rate > 0:
            h = dropout(h, self.dropout_rate, rng, training)
        out = h + (self.skip(x) if self.skip is not None else x)
        if self.ln_gain is not None:
            out = layer_norm(out, self.ln_gain, self.ln_bias)
        return out

    def parameters(self) -> list[Tensor]:
        params = self.fc1.parameters() + self.fc2.parameters()
        if self.skip is not None:
            params += self.skip.parameters()
        if self.ln_gain is not None:
            params += [self.ln_gain, self.ln_bias]
        return params
