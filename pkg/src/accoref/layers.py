"""Network building blocks on top of the autodiff core."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

__all__ = [
    "glorot_uniform",
    "Linear",
    "FeedForward",
    "LSTMCell",
    "Embedding",
    "Adam",
]


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


class Linear:
    """Affine map y = x W + b. Weight glorot-uniform, bias zero."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        self.w = Parameter(glorot_uniform(rng, n_in, n_out), f"{name}.w")
        self.b = Parameter(np.zeros(n_out), f"{name}.b")
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.w, self.b)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def ff_layer(x: Tensor, layer: Linear) -> Tensor:
    """One feed-forward layer: ReLU(x W + b)."""
    return ad.relu(layer(x))


class FeedForward:
    """Stack of ReLU layers; two of them form one projection block.

    Dropout (inverted scaling) is applied after each ReLU when ``training``
    and a generator are supplied.
    """

    def __init__(
        self,
        n_in: int,
        n_hidden: int,
        n_layers: int,
        rng: np.random.Generator,
        name: str,
        dropout: float = 0.0,
    ):
        self.layers = []
        width = n_in
        for k in range(n_layers):
            self.layers.append(Linear(width, n_hidden, rng, f"{name}.l{k}"))
            width = n_hidden
        self.out_dim = n_hidden
        self.dropout = dropout

    def __call__(
        self,
        x: Tensor,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> Tensor:
        for layer in self.layers:
            x = ff_layer(x, layer)
            x = ad.dropout(x, self.dropout, rng, training)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


class LSTMCell:
    """Single LSTM cell with gate order [input, forget, candidate, output]."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str):
        self.wx = Parameter(glorot_uniform(rng, n_in, 4 * n_hidden), f"{name}.wx")
        self.wh = Parameter(glorot_uniform(rng, n_hidden, 4 * n_hidden), f"{name}.wh")
        self.b = Parameter(np.zeros(4 * n_hidden), f"{name}.b")
        self.n_in = n_in
        self.n_hidden = n_hidden

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return ad.lstm_cell(x, h, c, self.wx, self.wh, self.b)

    def zero_state(self, n_rows: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((n_rows, self.n_hidden))
        return ad.const(z), ad.const(z.copy())

    def parameters(self) -> list[Parameter]:
        return [self.wx, self.wh, self.b]


class Embedding:
    """Learned lookup table; rows are gathered by integer id."""

    def __init__(self, n_rows: int, dim: int, rng: np.random.Generator, name: str):
        self.table = Parameter(glorot_uniform(rng, n_rows, dim), name)
        self.n_rows = n_rows
        self.dim = dim

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_rows):
            raise ad.DimensionError(
                f"embedding id out of range [0, {self.n_rows}) for {self.table.name}"
            )
        return ad.gather_rows(self.table, ids)

    def parameters(self) -> list[Parameter]:
        return [self.table]


class Adam:
    """Adam with bias correction; updates are in-place and deterministic."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._scratch = [np.empty_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v, tmp in zip(self.params, self._m, self._v, self._scratch):
            g = p.grad
            m *= b1
            np.multiply(g, 1.0 - b1, out=tmp)
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v *= b2
            v += tmp
            np.divide(v, bias2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / bias1
            p.data -= tmp

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
