"""From-scratch neural network engine used by the CRED model."""
from .functional import (
    BnParams,
    ConvParams,
    DenseParams,
    LstmParams,
    RnnParams,
    activation,
    batchnorm,
    bce_loss,
    bilstm_layer,
    conv2d,
    dense,
    lstm_cell,
    lstm_layer,
    residual_apply,
    rnn_cell,
    sigmoid,
)
from .gradcheck import grad_check, numerical_gradient, relative_error
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "BnParams", "ConvParams", "DenseParams", "LstmParams", "RnnParams",
    "activation", "adam_step", "batchnorm", "bce_loss", "bilstm_layer", "conv2d",
    "dense", "grad_check", "lstm_cell", "lstm_layer", "numerical_gradient",
    "relative_error", "residual_apply", "rnn_cell", "sigmoid",
]
