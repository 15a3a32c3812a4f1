"""Central finite-difference checks of the hand-written backward passes."""
from __future__ import annotations

import numpy as np

from .convnet import Network, mse_loss
from .layers import Dropout, Layer


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _pin_dropout(layers, x, forward):
    for l in layers:
        if isinstance(l, Dropout):
            l.fixed_mask = None
    forward(x)
    for l in layers:
        if isinstance(l, Dropout):
            l.fixed_mask = l._mask


def network_gradient_check(net: Network, x, target, h: float = 1e-4) -> dict:
    """Worst relative error of every parameter gradient, keyed ``"<index>:<Layer>.<name>"``.

    Runs in training mode with dropout masks pinned so the loss is a fixed
    function of the weights.  Use a float64 network.
    """
    fwd = lambda v: net.forward(v, train=True)
    _pin_dropout(net.layers, x, fwd)
    net.zero_grad()
    _, g = mse_loss(fwd(x), target)
    net.backward(g)
    worst = {}
    for (i, name, p), (_, _, grad) in zip(net.parameters(), net.gradients()):
        errs = []
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            lp = mse_loss(fwd(x), target)[0]
            p[idx] = orig - h
            lm = mse_loss(fwd(x), target)[0]
            p[idx] = orig
            errs.append(relative_error((lp - lm) / (2 * h), grad[idx]))
        worst[f"{i}:{type(net.layers[i]).__name__}.{name}"] = float(np.max(errs))
    for l in net.layers:
        if isinstance(l, Dropout):
            l.fixed_mask = None
    return worst


def input_gradient_check(layer: Layer, x, h: float = 1e-4, seed: int = 0) -> float:
    """Worst relative error of ``layer.backward`` against d(sum(w * out))/dx for random ``w``."""
    x = np.array(x, dtype=float)
    fwd = lambda v: layer.forward(v, train=True)
    _pin_dropout([layer], x, fwd)
    w = np.random.default_rng(seed).standard_normal(fwd(x).shape)
    layer.zero_grad()
    fwd(x)
    dx = layer.backward(w)
    errs = []
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        lp = float(np.sum(w * fwd(x)))
        x[idx] = orig - h
        lm = float(np.sum(w * fwd(x)))
        x[idx] = orig
        errs.append(relative_error((lp - lm) / (2 * h), dx[idx]))
    if isinstance(layer, Dropout):
        layer.fixed_mask = None
    return float(np.max(errs))
