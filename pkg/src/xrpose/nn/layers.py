"""Layers with explicit backward passes (NCHW tensors)."""
from __future__ import annotations

import numpy as np


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params, self.grads, self.state = {}, {}, {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2D(Layer):
    """k x k convolution, zero 'same' padding, optional stride."""

    def __init__(self, c_in, c_out, rng, k=3, stride=1, dtype=np.float32):
        super().__init__()
        self.k, self.stride, self.pad = k, stride, k // 2
        self.input_grad = True  # the network's first layer can skip it
        self.params["W"] = he_normal(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def out_shape(self, shape):
        c, h, w = shape
        s = self.stride
        return self.params["W"].shape[0], (h - 1) // s + 1, (w - 1) // s + 1

    def forward(self, x, train=False):
        W, b = self.params["W"], self.params["b"]
        n, c, h, w = x.shape
        ho, wo = (h - 1) // self.stride + 1, (w - 1) // self.stride + 1
        cols = _columns(x, self.k, self.stride, self.pad, ho, wo)
        wmat = W.transpose(0, 2, 3, 1).reshape(W.shape[0], -1)
        out = np.matmul(wmat, cols) + b[:, None]
        self._cache = (x.shape, cols, wmat, ho, wo)
        return out.reshape(n, -1, ho, wo)

    def backward(self, dout):
        W = self.params["W"]
        (n, c, h, w), cols, wmat, ho, wo = self._cache
        k, s, p = self.k, self.stride, self.pad
        d = np.ascontiguousarray(dout).reshape(n, -1, ho * wo)
        self.grads["W"] += np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0).reshape(
            W.shape[0], k, k, c).transpose(0, 3, 1, 2)
        self.grads["b"] += d.sum(axis=(0, 2))
        if not self.input_grad:
            return None
        if s == 1:
            # correlation of the output gradient with the flipped, transposed kernel
            wflip = W[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(c, -1)
            return np.matmul(wflip, _columns(dout, k, 1, k - 1 - p, h, w)).reshape(n, c, h, w)
        dcols = np.matmul(wmat.T, d).reshape(n, k, k, c, ho, wo)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j]
        return dxp[:, :, p:p + h, p:p + w]


def _columns(x, k, s, p, ho, wo):
    """im2col as ``(n, k*k*c, ho*wo)``; row order is (i, j, channel) so copies move whole image rows."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, max(h + 2 * p, s * (ho - 1) + k), max(w + 2 * p, s * (wo - 1) + k)), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    cols = np.empty((n, k, k, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return cols.reshape(n, k * k * c, ho * wo)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class _Pool2(Layer):
    """2 x 2 pooling with stride 2; odd trailing rows/columns are dropped."""

    def out_shape(self, shape):
        c, h, w = shape
        return c, h // 2, w // 2

    def _blocks(self, x):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        self._shape = x.shape
        return x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)

    def _scatter(self, g):
        n, c, h, w = self._shape
        dx = np.zeros(self._shape, dtype=g.dtype)
        ho, wo = h // 2, w // 2
        dx[:, :, :2 * ho, :2 * wo] = g.reshape(n, c, 2 * ho, 2 * wo)
        return dx


class MaxPool2(_Pool2):
    def forward(self, x, train=False):
        blk = self._blocks(x).transpose(0, 1, 2, 4, 3, 5)
        n, c, ho, wo = blk.shape[:4]
        flat = blk.reshape(n, c, ho, wo, 4)
        self._arg = flat.argmax(axis=-1)
        return np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        n, c, ho, wo = dout.shape
        g = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
        np.put_along_axis(g, self._arg[..., None], dout[..., None], axis=-1)
        g = g.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return self._scatter(g)


class AvgPool2(_Pool2):
    def forward(self, x, train=False):
        return self._blocks(x).mean(axis=(3, 5))

    def backward(self, dout):
        n, c, ho, wo = dout.shape
        g = np.broadcast_to((dout / 4)[:, :, :, None, :, None], (n, c, ho, 2, wo, 2))
        return self._scatter(g)


class BatchNorm(Layer):
    """Per-channel (4-D input) or per-feature (2-D input) normalization."""

    def __init__(self, size, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(size, dtype=dtype)
        self.params["beta"] = np.zeros(size, dtype=dtype)
        self.state["mean"] = np.zeros(size, dtype=dtype)
        self.state["var"] = np.ones(size, dtype=dtype)
        self.zero_grad()

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bc(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train=False):
        axes = self._axes(x)
        if train:
            mean, var = x.mean(axis=axes), x.var(axis=axes)
            m = self.momentum
            self.state["mean"] = (m * self.state["mean"] + (1 - m) * mean).astype(x.dtype)
            self.state["var"] = (m * self.state["var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.state["mean"], self.state["var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean, x)) * self._bc(inv, x)
        self._cache = (xhat, inv, axes)
        return self._bc(self.params["gamma"], x) * xhat + self._bc(self.params["beta"], x)

    def backward(self, dout):
        xhat, inv, axes = self._cache
        m = dout.size // dout.shape[1]
        self.grads["gamma"] += (dout * xhat).sum(axis=axes)
        self.grads["beta"] += dout.sum(axis=axes)
        dxhat = dout * self._bc(self.params["gamma"], dout)
        return self._bc(inv, dout) / m * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                          - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))


class Dropout(Layer):
    """Inverted dropout; identity at inference.  ``fixed_mask`` pins the mask (gradient checks)."""

    def __init__(self, rate, rng):
        super().__init__()
        self.rate, self.rng, self.fixed_mask = rate, rng, None

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        mask = self.fixed_mask
        if mask is None:
            mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        super().__init__()
        self.params["W"] = he_normal(rng, (n_in, n_out), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += self._x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T
