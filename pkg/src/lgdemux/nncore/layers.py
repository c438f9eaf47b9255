"""Layer forward/backward implementations (NCHW activations).

Convolutions run as one GEMM over an im2col matrix; its transpose pair
scatters gradients back with k*k strided adds, so any stride works.  Layers
cache what backward needs only when called with train=True, which keeps
inference re-entrant.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    pass


class Tensor:
    """Parameter or activation holder: values plus an optional same-shape grad."""

    __slots__ = ("values", "grad")

    def __init__(self, values: np.ndarray, grad: np.ndarray | None = None):
        self.values = values
        self.grad = grad

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0)


class Layer:
    save: str | None = None

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _im2col(x_padded: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B*out_h*out_w, C*k*k) patch matrix (materialized)."""
    b, c, _, _ = x_padded.shape
    sb, sc, sh, sw = x_padded.strides
    win = as_strided(
        x_padded,
        shape=(b, out_h, out_w, c, k, k),
        strides=(sb, sh * stride, sw * stride, sc, sh, sw),
    )
    return win.reshape(b * out_h * out_w, c * k * k)


class Conv2d(Layer):
    """Same-padded square convolution (odd kernel), optional stride."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, rng: np.random.Generator, dtype):
        if k % 2 == 0:
            raise ShapeError(f"conv kernel must be odd, got {k}")
        self.in_ch, self.out_ch, self.k, self.stride = in_ch, out_ch, k, stride
        self.weight = Tensor(_fan_in_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k, dtype))
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype))
        self._cache = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        pad = self.k // 2
        return ((h + 2 * pad - self.k) // self.stride + 1,
                (w + 2 * pad - self.k) // self.stride + 1)

    def forward(self, x, train):
        b, c, h, w = x.shape
        pad = self.k // 2
        oh, ow = self.out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = _im2col(xp, self.k, self.stride, oh, ow)
        wmat = self.weight.values.reshape(self.out_ch, -1)
        y = cols @ wmat.T + self.bias.values
        if train:
            self._cache = (xp.shape, cols, (b, h, w, oh, ow))
        return y.reshape(b, oh, ow, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, dy):
        xp_shape, cols, (b, h, w, oh, ow) = self._cache
        pad = self.k // 2
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)

        self.weight.grad += (dy_mat.T @ cols).reshape(self.weight.shape)
        self.bias.grad += dy_mat.sum(axis=0)

        dcols = dy_mat @ self.weight.values.reshape(self.out_ch, -1)
        dwin = dcols.reshape(b, oh, ow, self.in_ch, self.k, self.k).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        s = self.stride
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i : i + oh * s : s, j : j + ow * s : s] += dwin[:, :, :, :, i, j]
        return dxp[:, :, pad : pad + h, pad : pad + w]


class Dense(Layer):
    def __init__(self, in_f: int, out_f: int, rng: np.random.Generator, dtype):
        self.in_f, self.out_f = in_f, out_f
        self.weight = Tensor(_fan_in_uniform(rng, (out_f, in_f), in_f, dtype))
        self.bias = Tensor(np.zeros(out_f, dtype=dtype))
        self._x = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, train):
        if train:
            self._x = x
        return x @ self.weight.values.T + self.bias.values

    def backward(self, dy):
        self.weight.grad += dy.T @ self._x
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.values


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x, train):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        if train:
            self._y = y
        return y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class InstanceNorm(Layer):
    """Per-sample, per-channel normalization over the spatial axes.

    No running statistics, so inference is deterministic and checkpoints carry
    only gamma/beta.
    """

    EPS = 1e-5

    def __init__(self, channels: int, dtype):
        self.channels = channels
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self._cache = None

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def _normalize(self, x):
        mu = x.mean(axis=(2, 3), keepdims=True)
        var = x.var(axis=(2, 3), keepdims=True)
        istd = 1.0 / np.sqrt(var + self.EPS)
        return (x - mu) * istd, istd

    def forward(self, x, train):
        xhat, istd = self._normalize(x)
        if train:
            self._cache = (xhat, istd)
        g = self.gamma.values.reshape(1, -1, 1, 1)
        b = self.beta.values.reshape(1, -1, 1, 1)
        return xhat * g + b

    def backward(self, dy):
        xhat, istd = self._cache
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma.values.reshape(1, -1, 1, 1)
        m1 = dxhat.mean(axis=(2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        return istd * (dxhat - m1 - xhat * m2)


class Downsample(Layer):
    """2x2 average pooling, stride 2."""

    def __init__(self):
        self._in_shape = None

    def forward(self, x, train):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"downsample needs even spatial dims, got {h}x{w}")
        if train:
            self._in_shape = x.shape
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, dy):
        return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25


class Upsample(Layer):
    """2x nearest-neighbor upsampling."""

    def forward(self, x, train):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, dy):
        b, c, h, w = dy.shape
        return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Concat(Layer):
    """Channel-concatenate the incoming activation with a saved skip tensor."""

    def __init__(self, with_tag: str):
        self.with_tag = with_tag
        self._main_ch = None

    def forward_with_skip(self, x, skip, train):
        if x.shape[0] != skip.shape[0] or x.shape[2:] != skip.shape[2:]:
            raise ShapeError(
                f"concat mismatch: main {x.shape} vs skip {skip.shape} (tag {self.with_tag!r})"
            )
        if train:
            self._main_ch = x.shape[1]
        return np.concatenate([x, skip], axis=1)

    def backward_split(self, dy):
        return dy[:, : self._main_ch], dy[:, self._main_ch :]


class GlobalAvgPool(Layer):
    def __init__(self):
        self._hw = None

    def forward(self, x, train):
        if train:
            self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        h, w = self._hw
        return np.broadcast_to(dy[:, :, None, None], dy.shape + (h, w)).copy() / (h * w)


class Flatten(Layer):
    def __init__(self):
        self._in_shape = None

    def forward(self, x, train):
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)
