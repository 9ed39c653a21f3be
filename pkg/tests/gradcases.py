"""Gradient-check cases shared by the unit and acceptance tests (float64)."""
import numpy as np

from credkit import cred
from credkit.nn import layers as L
from credkit.nn.functional import LstmParams, bce_loss, lstm_cell, lstm_cell_backward
from credkit.nn.gradcheck import grad_check, network_grad_check, numerical_gradient, relative_error


def _f64(layer):
    return layer.astype(np.float64)


def dense_case(seed):
    rng = np.random.default_rng(seed)
    return grad_check(_f64(L.Dense(5, 4, rng)), rng.standard_normal((3, 5)), seed=seed)


def conv_case(seed, stride=(1, 1)):
    rng = np.random.default_rng(seed)
    layer = _f64(L.Conv2D(2, 3, (3, 3), stride, rng))
    layer.params["b"][:] = rng.standard_normal(3)
    return grad_check(layer, rng.standard_normal((2, 6, 5, 2)), seed=seed)


def batchnorm_case(seed, train=True):
    rng = np.random.default_rng(seed)
    layer = _f64(L.BatchNorm(3))
    layer.params["gamma"][:] = rng.uniform(0.5, 1.5, 3)
    layer.params["beta"][:] = rng.standard_normal(3)
    layer.buffers["running_mean"][:] = rng.standard_normal(3)
    layer.buffers["running_var"][:] = rng.uniform(0.5, 2.0, 3)
    return grad_check(layer, rng.standard_normal((4, 3, 2, 3)), train=train, seed=seed)


def lstm_cell_case(seed):
    rng = np.random.default_rng(seed)
    h, d, n = 3, 4, 2
    W = rng.standard_normal((4 * h, h + d)) * 0.5
    b = rng.standard_normal(4 * h) * 0.1
    x = rng.standard_normal((n, d))
    a0 = rng.standard_normal((n, h))
    c0 = rng.standard_normal((n, h))
    ra, rc = rng.standard_normal((n, h)), rng.standard_normal((n, h))

    def objective():
        a, c = lstm_cell(x, a0, c0, LstmParams.from_stacked(W, b))
        return float(np.sum(ra * a) + np.sum(rc * c))

    dx, da0, dc0, dW, db = lstm_cell_backward(ra, rc, x, a0, c0, LstmParams.from_stacked(W, b))
    pairs = [(dx, x), (da0, a0), (dc0, c0), (dW, W), (db, b)]
    return max(relative_error(g, numerical_gradient(objective, arr)) for g, arr in pairs)


def lstm_layer_case(seed, reverse=False):
    rng = np.random.default_rng(seed)
    layer = _f64(L.LSTM(4, 3, reverse=reverse, rng=rng))
    return grad_check(layer, rng.standard_normal((2, 5, 4)), seed=seed)


def bilstm_case(seed):
    rng = np.random.default_rng(seed)
    return grad_check(_f64(L.BiLSTM(4, 3, rng)), rng.standard_normal((2, 5, 4)), seed=seed)


def residual_conv_case(seed):
    rng = np.random.default_rng(seed)
    block = _f64(L.preact_block(2, (3, 3), rng))
    return grad_check(block, rng.standard_normal((3, 5, 4, 2)), seed=seed)


def residual_bilstm_case(seed):
    rng = np.random.default_rng(seed)
    block = _f64(L.Residual(L.BiLSTM(6, 3, rng)))
    return grad_check(block, rng.standard_normal((2, 5, 6)), seed=seed)


LAYER_CASES = {
    "dense": dense_case,
    "conv2d": conv_case,
    "conv2d_stride2": lambda s: conv_case(s, (2, 2)),
    "batchnorm_train": batchnorm_case,
    "batchnorm_infer": lambda s: batchnorm_case(s, train=False),
    "lstm_cell": lstm_cell_case,
    "lstm_forward": lstm_layer_case,
    "lstm_reverse": lambda s: lstm_layer_case(s, reverse=True),
    "bilstm_layer": bilstm_case,
    "residual_conv_block": residual_conv_case,
    "residual_bilstm_block": residual_bilstm_case,
}

TINY = dict(input_frames=24, input_bins=9, conv_stage_filters=(2, 4), lstm_hidden=3,
            res_blocks_per_stage=1, dense_hidden=4)


def end_to_end_case(seed):
    """Worst per-tensor error for the tiny CRED config under BCE."""
    cfg = cred.CredConfig(**TINY, seed=seed)
    model = cred.build_model(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((2, cfg.input_frames, cfg.input_bins, cfg.channels))
    y = (rng.random((2, cfg.output_frames)) > 0.5).astype(np.float64)
    report = network_grad_check(model.net, x, lambda p: bce_loss(p, y), input_samples=64, seed=seed)
    return max(report.values())
