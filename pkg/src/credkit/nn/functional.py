"""Forward and backward kernels for every layer type used by CRED.

Arrays are plain :class:`numpy.ndarray`. Internally convolutions and
batch normalisation work channels-last (``N, H, W, C``) because that
keeps the im2col matrices contiguous; the public ``conv2d`` and
``batchnorm`` wrappers accept the channels-first layout.

Each ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes the upstream gradient and that cache.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import BatchTooSmall, ShapeMismatch

# ---------------------------------------------------------------------------
# activations


def sigmoid(z):
    """Logistic function, overflow-free for any finite input."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh(z):
    return np.tanh(z)


def activation(kind: str, z):
    if kind == "tanh":
        return tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "relu":
        return np.maximum(z, 0)
    raise ValueError(f"unknown activation {kind!r}")


def _fast_sigmoid(z):
    # only called on gate pre-activations; clip keeps exp() finite in float32
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class RnnParams:
    W_aa: np.ndarray
    W_ax: np.ndarray
    b_a: np.ndarray
    W_ya: np.ndarray
    b_y: np.ndarray


@dataclass
class LstmParams:
    """Gate weights acting on the concatenation ``[a_prev; x]``.

    Every ``W_*`` has shape ``(hidden, hidden + input)``. Gates are
    candidate (c), update (u), forget (f) and output (o).
    """

    W_c: np.ndarray
    W_u: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    b_c: np.ndarray
    b_u: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        shapes = {w.shape for w in (self.W_c, self.W_u, self.W_f, self.W_o)}
        if len(shapes) != 1:
            raise ShapeMismatch(f"gate weights differ in shape: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[1] < shape[0]:
            raise ShapeMismatch(f"gate weights must be (hidden, hidden+input), got {shape}")
        for b in (self.b_c, self.b_u, self.b_f, self.b_o):
            if b.shape != (shape[0],):
                raise ShapeMismatch(f"bias shape {b.shape} != ({shape[0]},)")

    @property
    def hidden_size(self) -> int:
        return self.W_c.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_c.shape[1] - self.W_c.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """``(W, b)`` with gates stacked in the order c, u, f, o."""
        W = np.concatenate([self.W_c, self.W_u, self.W_f, self.W_o], axis=0)
        b = np.concatenate([self.b_c, self.b_u, self.b_f, self.b_o])
        return W, b

    @classmethod
    def from_stacked(cls, W: np.ndarray, b: np.ndarray) -> "LstmParams":
        h = W.shape[0] // 4
        Ws = [W[i * h:(i + 1) * h] for i in range(4)]
        bs = [b[i * h:(i + 1) * h] for i in range(4)]
        return cls(*Ws, *bs)


@dataclass
class ConvParams:
    """Kernels ``(out_ch, in_ch, kh, kw)`` and per-output-channel bias."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, channels: int, dtype=np.float64) -> "BnParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype))


@dataclass
class DenseParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray


# ---------------------------------------------------------------------------
# dense


def dense_forward(x, W, b):
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeMismatch(f"dense: input {x.shape} vs weight {W.shape}, bias {b.shape}")
    return x @ W.T + b, x


def dense_backward(dy, cache, W):
    x = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dW = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ W
    return dx, dW, db


def dense(x, p: DenseParams):
    """``y = W x + b`` on the last axis (independently per time step)."""
    return dense_forward(np.asarray(x), p.weight, p.bias)[0]


# ---------------------------------------------------------------------------
# vanilla RNN


def rnn_cell(x_t, a_prev, p: RnnParams):
    """One step of the basic recurrent unit: returns ``(a_t, y_t)``."""
    if p.W_aa.shape[0] != p.W_aa.shape[1] or p.W_ax.shape[0] != p.W_aa.shape[0]:
        raise ShapeMismatch("rnn_cell: W_aa must be square and match W_ax rows")
    if np.shape(x_t)[-1] != p.W_ax.shape[1] or np.shape(a_prev)[-1] != p.W_aa.shape[1]:
        raise ShapeMismatch("rnn_cell: input or state width does not match weights")
    a_t = np.tanh(a_prev @ p.W_aa.T + x_t @ p.W_ax.T + p.b_a)
    y_t = sigmoid(a_t @ p.W_ya.T + p.b_y)
    return a_t, y_t


# ---------------------------------------------------------------------------
# LSTM


def _check_lstm(x, W, b):
    h = W.shape[0] // 4
    if W.shape[0] != 4 * h or W.shape[1] != h + x.shape[-1] or b.shape != (4 * h,):
        raise ShapeMismatch(
            f"lstm: weight {W.shape} / bias {b.shape} incompatible with input width {x.shape[-1]}"
        )
    return h


def lstm_cell(x_t, a_prev, c_prev, p: LstmParams):
    """One LSTM step; returns ``(a_t, c_t)``.

    ``c_t = u * c~ + f * c_prev`` and ``a_t = o * tanh(c_t)`` with the
    gates computed from ``[a_prev; x_t]``.
    """
    x_t = np.asarray(x_t)
    W, b = p.stacked()
    h = _check_lstm(x_t, W, b)
    if np.shape(a_prev)[-1] != h or np.shape(c_prev)[-1] != h:
        raise ShapeMismatch("lstm_cell: state width does not match hidden size")
    z = np.concatenate([a_prev, x_t], axis=-1) @ W.T + b
    cand = np.tanh(z[..., :h])
    u = sigmoid(z[..., h:2 * h])
    f = sigmoid(z[..., 2 * h:3 * h])
    o = sigmoid(z[..., 3 * h:])
    c_t = u * cand + f * c_prev
    a_t = o * np.tanh(c_t)
    return a_t, c_t


def lstm_cell_backward(da, dc, x_t, a_prev, c_prev, p: LstmParams):
    """Gradients of one LSTM step.

    Returns ``(dx, da_prev, dc_prev, dW, db)`` where ``dW``/``db`` use
    the stacked c, u, f, o layout of :meth:`LstmParams.stacked`.
    """
    W, b = p.stacked()
    h = W.shape[0] // 4
    concat = np.concatenate([a_prev, x_t], axis=-1)
    z = concat @ W.T + b
    cand = np.tanh(z[..., :h])
    u = sigmoid(z[..., h:2 * h])
    f = sigmoid(z[..., 2 * h:3 * h])
    o = sigmoid(z[..., 3 * h:])
    c_t = u * cand + f * c_prev
    tc = np.tanh(c_t)
    do = da * tc
    dc = dc + da * o * (1.0 - tc ** 2)
    dz = np.concatenate([
        dc * u * (1.0 - cand ** 2),
        dc * cand * u * (1.0 - u),
        dc * c_prev * f * (1.0 - f),
        do * o * (1.0 - o),
    ], axis=-1)
    dconcat = dz @ W
    dz2 = dz.reshape(-1, 4 * h)
    dW = dz2.T @ concat.reshape(-1, concat.shape[-1])
    db = dz2.sum(axis=0)
    return dconcat[..., h:], dconcat[..., :h], dc * f, dW, db


def lstm_seq_forward(x, W, b, reverse: bool = False):
    """Run an LSTM over ``x`` of shape ``(N, T, D)`` from zero state.

    ``W`` is the stacked ``(4h, h + D)`` weight. With ``reverse`` the
    sequence is processed back to front and the output re-reversed, so
    ``out[:, t]`` is always aligned with ``x[:, t]``.
    """
    h = _check_lstm(x, W, b)
    if reverse:
        x = x[:, ::-1]
    N, T, _ = x.shape
    Wa_T = np.ascontiguousarray(W[:, :h].T)
    zx = x @ W[:, h:].T + b
    dtype = zx.dtype
    a = np.zeros((N, h), dtype)
    c = np.zeros((N, h), dtype)
    out = np.empty((N, T, h), dtype)
    gates = np.empty((T, N, 4 * h), dtype)
    cells = np.empty((T + 1, N, h), dtype)
    tcs = np.empty((T, N, h), dtype)
    cells[0] = c
    for t in range(T):
        z = zx[:, t] + a @ Wa_T
        g = gates[t]
        g[:, :h] = np.tanh(z[:, :h])
        g[:, h:] = _fast_sigmoid(z[:, h:])
        c = g[:, h:2 * h] * g[:, :h] + g[:, 2 * h:3 * h] * c
        tc = np.tanh(c)
        a = g[:, 3 * h:] * tc
        cells[t + 1] = c
        tcs[t] = tc
        out[:, t] = a
    cache = (x, W, gates, cells, tcs, out, reverse)
    return (out[:, ::-1] if reverse else out), cache


def lstm_seq_backward(dout, cache):
    """Backpropagation through time for :func:`lstm_seq_forward`."""
    x, W, gates, cells, tcs, out, reverse = cache
    if reverse:
        dout = dout[:, ::-1]
    N, T, h = out.shape
    Wa = W[:, :h]
    dz_all = np.empty((N, T, 4 * h), dtype=gates.dtype)
    da_next = np.zeros((N, h), gates.dtype)
    dc_next = np.zeros((N, h), gates.dtype)
    for t in range(T - 1, -1, -1):
        g = gates[t]
        cand, u, f, o = g[:, :h], g[:, h:2 * h], g[:, 2 * h:3 * h], g[:, 3 * h:]
        tc = tcs[t]
        da = dout[:, t] + da_next
        dc = dc_next + da * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :h] = dc * u * (1.0 - cand * cand)
        dz[:, h:2 * h] = dc * cand * u * (1.0 - u)
        dz[:, 2 * h:3 * h] = dc * cells[t] * f * (1.0 - f)
        dz[:, 3 * h:] = da * tc * o * (1.0 - o)
        da_next = dz @ Wa
        dc_next = dc * f
    dz2 = dz_all.reshape(N * T, 4 * h)
    a_prev = np.concatenate([np.zeros((N, 1, h), out.dtype), out[:, :-1]], axis=1)
    dWa = dz2.T @ a_prev.reshape(N * T, h)
    dWx = dz2.T @ x.reshape(N * T, -1)
    db = dz2.sum(axis=0)
    dx = dz_all @ W[:, h:]
    if reverse:
        dx = dx[:, ::-1]
    return dx, np.concatenate([dWa, dWx], axis=1), db


def lstm_layer(x_seq, p: LstmParams, direction: str = "forward"):
    """Apply an LSTM to ``(T, in)`` or ``(N, T, in)``; zero initial state."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    x = np.asarray(x_seq)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ShapeMismatch(f"lstm_layer expects (T, in) or (N, T, in), got {np.shape(x_seq)}")
    W, b = p.stacked()
    out, _ = lstm_seq_forward(x, W, b, reverse=direction == "backward")
    return out[0] if single else out


def bilstm_layer(x_seq, p_fwd: LstmParams, p_bwd: LstmParams):
    """Concatenate forward and backward LSTM outputs at every step."""
    if p_fwd.hidden_size != p_bwd.hidden_size:
        raise ShapeMismatch("bilstm_layer: directions must share the hidden size")
    return np.concatenate([
        lstm_layer(x_seq, p_fwd, "forward"),
        lstm_layer(x_seq, p_bwd, "backward"),
    ], axis=-1)


# ---------------------------------------------------------------------------
# convolution (channels-last internally)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) padding for 'same' convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv_forward(x, W, b, stride=(1, 1)):
    """'Same' cross-correlation on ``x`` of shape ``(N, H, W, C_in)``.

    ``W`` has shape ``(C_out, C_in, kh, kw)``; output is
    ``(N, ceil(H/sh), ceil(W/sw), C_out)``.
    """
    N, H, Wd, C = x.shape
    O, Ci, kh, kw = W.shape
    if Ci != C or (b is not None and b.shape != (O,)):
        raise ShapeMismatch(f"conv: input channels {C} vs kernel {W.shape}, bias {b.shape}")
    sh, sw = stride
    Ho, pt, pb = same_padding(H, kh, sh)
    Wo, pl, pr = same_padding(Wd, kw, sw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = win[:, ::sh, ::sw][:, :Ho, :Wo].reshape(N * Ho * Wo, C * kh * kw)
    Wm = W.reshape(O, -1)
    out = cols @ Wm.T
    if b is not None:
        out += b
    out = out.reshape(N, Ho, Wo, O)
    cache = (x.shape, xp.shape, (pt, pl), cols, W, stride)
    return out, cache


def conv_backward(dout, cache):
    x_shape, xp_shape, (pt, pl), cols, W, (sh, sw) = cache
    N, Ho, Wo, O = dout.shape
    _, C, kh, kw = W.shape
    d2 = dout.reshape(-1, O)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ W.reshape(O, -1)).reshape(N, Ho, Wo, C, kh, kw)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += dcols[..., i, j]
    H, Wd = x_shape[1], x_shape[2]
    dx = dxp[:, pt:pt + H, pl:pl + Wd]
    return dx, dW, db


def conv2d(x, p: ConvParams, stride=(1, 1)):
    """Channels-first wrapper: ``x`` is ``(C, H, W)`` or ``(N, C, H, W)``."""
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatch(f"conv2d expects (C, H, W) or (N, C, H, W), got {np.shape(x)}")
    kh, kw = p.weight.shape[2:]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeMismatch(f"input {x.shape[2:]} smaller than kernel {(kh, kw)}")
    out, _ = conv_forward(x.transpose(0, 2, 3, 1), p.weight, p.bias, tuple(stride))
    out = out.transpose(0, 3, 1, 2)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# batch normalisation (channels on the last axis internally)


def bn_forward(x, gamma, beta, running_mean, running_var, train: bool,
               eps: float = 1e-5, momentum: float = 0.1):
    """Normalise over every axis but the last.

    In training mode the running statistics are updated in place.
    """
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm: {C} channels vs gamma {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if train:
        if x.shape[0] < 2:
            raise BatchTooSmall("batchnorm in train mode needs at least 2 samples")
        m = x.size // C
        mean = x.mean(axis=axes)
        xc = x - mean
        var = (xc * xc).mean(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
        return xhat * gamma + beta, (xhat, inv, gamma, True)
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x - running_mean) * inv
    return xhat * gamma + beta, (xhat, inv, gamma, False)


def bn_backward(dy, cache):
    xhat, inv, gamma, train = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    if not train:
        return dy * (gamma * inv), dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dx = (gamma * inv / m) * (m * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def batchnorm(x, p: BnParams, mode: str = "train"):
    """Channels-first batch normalisation of ``(N, C, ...)``."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeMismatch("batchnorm expects at least (N, C)")
    xl = np.moveaxis(x, 1, -1)
    y, _ = bn_forward(xl, p.gamma, p.beta, p.running_mean, p.running_var,
                      mode == "train", p.epsilon, p.momentum)
    return np.moveaxis(y, -1, 1)


# ---------------------------------------------------------------------------
# residual shortcut and loss


def residual_apply(x, F, projection=None):
    """``F(x) + x``; with ``projection`` the shortcut is ``projection(x)``."""
    x = np.asarray(x)
    fx = F(x)
    shortcut = x if projection is None else projection(x)
    if np.shape(fx) != np.shape(shortcut):
        raise ShapeMismatch(
            f"residual branch shape {np.shape(fx)} != shortcut shape {np.shape(shortcut)}"
        )
    return fx + shortcut


BCE_CLAMP = 1e-7


def bce_loss(p_hat, y):
    """Mean binary cross-entropy and its gradient with respect to ``p_hat``.

    The loss is a numpy scalar in the working precision of ``p_hat``.
    """
    p_hat = np.asarray(p_hat)
    y = np.asarray(y)
    if p_hat.shape != y.shape:
        raise ShapeMismatch(f"bce_loss: {p_hat.shape} vs {y.shape}")
    p = np.clip(p_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
    return loss, grad.astype(p_hat.dtype, copy=False)
