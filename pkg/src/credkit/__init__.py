"""credkit: convolutional-recurrent residual earthquake detection toolkit."""

__version__ = "0.1.0"
