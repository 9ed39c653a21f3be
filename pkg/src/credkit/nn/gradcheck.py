"""Finite-difference verification of the hand-written backward passes."""
from __future__ import annotations

from typing import Callable

import numpy as np


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max over elements of ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numerical_gradient(fn: Callable[[], float], array: np.ndarray,
                       epsilon: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``array``.

    ``array`` is perturbed in place and restored afterwards. With
    ``indices`` (flat positions) only those entries are estimated and
    the rest of the result is zero.
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + epsilon
        plus = fn()
        flat[i] = orig - epsilon
        minus = fn()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * epsilon)
    return grad


def grad_check(layer, x, epsilon: float = 1e-5, train: bool = True, seed: int = 0,
               loss: Callable | None = None) -> float:
    """Compare ``layer.backward`` with central differences.

    The scalar objective is ``sum(r * layer(x))`` for a fixed random
    ``r`` unless ``loss`` (returning ``(value, dvalue/doutput)``) is
    given. Every parameter and the input are checked; the worst
    relative error is returned. Use float64 parameters and input.
    """
    x = np.array(x, dtype=np.float64)
    if loss is None:
        r = np.random.default_rng(seed).standard_normal(layer.forward(x, train).shape)

        def loss(out):
            return np.sum(r * out), r

    return max(network_grad_check(layer, x, loss, epsilon, train, seed=seed).values())


def _elementwise_error(a, n, floor=1e-8):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def network_grad_check(net, x, loss: Callable, epsilon: float = 1e-5, train: bool = True,
                       input_samples: int | None = None, seed: int = 0,
                       refine_above: float = 1e-6,
                       refine_epsilon: float = 1e-7) -> dict[str, float]:
    """Per-tensor worst relative error of a whole network's gradients.

    Every parameter entry is checked; the input is checked at
    ``input_samples`` random positions (all when ``None``). Float64
    differences lose digits to cancellation when an entry is many
    orders of magnitude below the loss, so entries whose error exceeds
    ``refine_above`` are re-estimated with a smaller step on an
    extended-precision copy of the network before being scored. The
    smaller step also keeps ReLU inputs from crossing their kink.
    """
    import copy

    x = np.array(x, dtype=np.float64)
    net.zero_grad()
    _, dy = loss(net.forward(x, train))
    dx = net.backward(dy)

    wide = copy.deepcopy(net).astype(np.longdouble)
    x_wide = x.astype(np.longdouble)

    def objective():
        return loss(net.forward(x, train))[0]

    def objective_wide():
        return loss(wide.forward(x_wide, train))[0]

    def check(analytic, array, array_wide, indices):
        idx = np.arange(array.size) if indices is None else np.asarray(indices)
        numeric = numerical_gradient(objective, array, epsilon, idx).reshape(-1)
        a = analytic.reshape(-1)
        err = _elementwise_error(a[idx], numeric[idx])
        redo = idx[err > refine_above]
        if redo.size:
            precise = numerical_gradient(objective_wide, array_wide, refine_epsilon, redo).reshape(-1)
            err[err > refine_above] = _elementwise_error(a[redo], precise[redo])
        return float(err.max()) if err.size else 0.0

    rng = np.random.default_rng(seed)
    picks = None
    if input_samples is not None and input_samples < x.size:
        picks = np.sort(rng.choice(x.size, input_samples, replace=False))
    report = {"input": check(dx, x, x_wide, picks)}
    for (name, p, g), (_, pw, _) in zip(list(net.named_params()), list(wide.named_params())):
        report[name] = check(g.copy(), p, pw, None)
    return report
