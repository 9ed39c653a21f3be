"""Stateful layers with hand-written backward passes.

A layer owns ``params`` (trainable arrays), ``grads`` (same keys,
accumulated by :meth:`Layer.backward`) and optionally ``buffers``
(non-trainable state such as batch-norm running statistics). Image
tensors are channels-last ``(N, H, W, C)``; sequences are ``(N, T, D)``.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ShapeMismatch
from . import functional as F


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x, train: bool = False):
        return self.forward(x, train)

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        """Yield ``(name, param, grad)`` in declaration order."""
        for key, value in self.params.items():
            yield prefix + key, value, self.grads[key]
        for name, child in self.children():
            yield from child.named_params(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in self.buffers.items():
            yield prefix + key, value
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def zero_grad(self):
        for _, _, g in self.named_params():
            g[...] = 0.0

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def astype(self, dtype):
        for key in list(self.params):
            self.params[key] = self.params[key].astype(dtype)
        for key in list(self.buffers):
            self.buffers[key] = self.buffers[key].astype(dtype)
        self._init_grads()
        for _, child in self.children():
            child.astype(dtype)
        return self


class Dense(Layer):
    """Affine map on the last axis; ``W`` is ``(out, in)``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 init: str = "he"):
        super().__init__()
        if rng is None or init == "zeros":
            W = np.zeros((n_out, n_in))
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in))
        self.params = {"W": W, "b": np.zeros(n_out)}
        self._init_grads()

    def forward(self, x, train=False):
        y, self._cache = F.dense_forward(x, self.params["W"], self.params["b"])
        return y

    def backward(self, dy):
        dx, dW, db = F.dense_backward(dy, self._cache, self.params["W"])
        self.grads["W"] += dW
        self.grads["b"] += db
        return dx


class Conv2D(Layer):
    """'Same' convolution on channels-last input."""

    def __init__(self, c_in: int, c_out: int, kernel=(3, 3), stride=(1, 1),
                 rng: np.random.Generator | None = None, bias: bool = True):
        super().__init__()
        kh, kw = kernel
        fan_in = c_in * kh * kw
        if rng is None:
            W = np.zeros((c_out, c_in, kh, kw))
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, kh, kw))
        self.stride = tuple(stride)
        self.params = {"W": W}
        if bias:
            self.params["b"] = np.zeros(c_out)
        self._init_grads()

    def forward(self, x, train=False):
        y, self._cache = F.conv_forward(x, self.params["W"], self.params.get("b"), self.stride)
        return y

    def backward(self, dy):
        dx, dW, db = F.conv_backward(dy, self._cache)
        self.grads["W"] += dW
        if "b" in self.grads:
            self.grads["b"] += db
        return dx


class BatchNorm(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self._init_grads()

    def forward(self, x, train=False):
        y, self._cache = F.bn_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train, self.eps, self.momentum,
        )
        return y

    def backward(self, dy):
        dx, dgamma, dbeta = F.bn_backward(dy, self._cache)
        self.grads["gamma"] += dgamma
        self.grads["beta"] += dbeta
        return dx


class ReLU(Layer):
    def forward(self, x, train=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._cache, dy, 0).astype(dy.dtype, copy=False)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._cache = F.sigmoid(x)
        return self._cache

    def backward(self, dy):
        p = self._cache
        return dy * p * (1.0 - p)


class LSTM(Layer):
    """Single-direction LSTM over ``(N, T, D)`` returning every state.

    Weights are stored stacked as ``W`` of shape ``(4h, h + D)`` with
    gates in the order candidate, update, forget, output.
    """

    def __init__(self, n_in: int, hidden: int, reverse: bool = False,
                 rng: np.random.Generator | None = None, forget_bias: float = 1.0):
        super().__init__()
        self.hidden = hidden
        self.reverse = reverse
        if rng is None:
            W = np.zeros((4 * hidden, hidden + n_in))
            b = np.zeros(4 * hidden)
        else:
            limit = np.sqrt(6.0 / (n_in + 2 * hidden))
            W = rng.uniform(-limit, limit, (4 * hidden, hidden + n_in))
            b = np.zeros(4 * hidden)
            b[2 * hidden:3 * hidden] = forget_bias
        self.params = {"W": W, "b": b}
        self._init_grads()

    def cell_params(self) -> F.LstmParams:
        return F.LstmParams.from_stacked(self.params["W"], self.params["b"])

    def forward(self, x, train=False):
        y, self._cache = F.lstm_seq_forward(x, self.params["W"], self.params["b"], self.reverse)
        return y

    def backward(self, dy):
        dx, dW, db = F.lstm_seq_backward(dy, self._cache)
        self.grads["W"] += dW
        self.grads["b"] += db
        return dx


class BiLSTM(Layer):
    """Forward and backward LSTMs whose outputs are concatenated."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.fwd = LSTM(n_in, hidden, reverse=False, rng=rng)
        self.bwd = LSTM(n_in, hidden, reverse=True, rng=rng)
        self.hidden = hidden

    def children(self):
        return [("fwd", self.fwd), ("bwd", self.bwd)]

    def forward(self, x, train=False):
        return np.concatenate([self.fwd.forward(x, train), self.bwd.forward(x, train)], axis=-1)

    def backward(self, dy):
        h = self.hidden
        return self.fwd.backward(dy[..., :h]) + self.bwd.backward(dy[..., h:])


class Sequential(Layer):
    def __init__(self, *layers: Layer, names: list[str] | None = None):
        super().__init__()
        self.layers = list(layers)
        self.names = names or [str(i) for i in range(len(self.layers))]

    def children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Residual(Layer):
    """``body(x) + shortcut(x)``; identity shortcut when none is given."""

    def __init__(self, body: Layer, shortcut: Layer | None = None):
        super().__init__()
        self.body = body
        self.shortcut = shortcut

    def children(self):
        kids = [("body", self.body)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        return kids

    def forward(self, x, train=False):
        fx = self.body.forward(x, train)
        sx = x if self.shortcut is None else self.shortcut.forward(x, train)
        if fx.shape != sx.shape:
            raise ShapeMismatch(f"residual branch {fx.shape} != shortcut {sx.shape}")
        return fx + sx

    def backward(self, dy):
        dx = self.body.backward(dy)
        if self.shortcut is None:
            return dx + dy
        return dx + self.shortcut.backward(dy)


class ToSequence(Layer):
    """``(N, H, W, C)`` feature volume to ``(N, H, W*C)`` sequence."""

    def forward(self, x, train=False):
        self._cache = x.shape
        N, H, W, C = x.shape
        return x.reshape(N, H, W * C)

    def backward(self, dy):
        return dy.reshape(self._cache)


class Squeeze(Layer):
    """Drop a trailing axis of size one."""

    def forward(self, x, train=False):
        if x.shape[-1] != 1:
            raise ShapeMismatch(f"cannot squeeze last axis of {x.shape}")
        return x[..., 0]

    def backward(self, dy):
        return dy[..., None]


def preact_block(channels: int, kernel=(3, 3), rng=None, bias: bool = True) -> Residual:
    """Pre-activation residual block: (BN, ReLU, conv) twice plus identity.

    The first convolution never has a bias since the batch norm after it
    would cancel one; ``bias`` controls the second.
    """
    body = Sequential(
        BatchNorm(channels), ReLU(), Conv2D(channels, channels, kernel, rng=rng, bias=False),
        BatchNorm(channels), ReLU(), Conv2D(channels, channels, kernel, rng=rng, bias=bias),
        names=["bn1", "relu1", "conv1", "bn2", "relu2", "conv2"],
    )
    return Residual(body)
