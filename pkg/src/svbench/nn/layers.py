"""Layers with explicit forward/backward passes.

Inputs are channels-last: a window batch has shape ``(batch, time, channels)``.
Each layer caches what its backward pass needs during ``forward`` and fills
``grads`` (aligned with ``params``) during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32):
        super().__init__()
        if n_in <= 0 or n_out <= 0:
            raise ValueError("layer widths must be positive")
        limit = np.sqrt(6.0 / n_in)
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        self.params = [self.W]
        self.b = None
        if bias:
            self.b = np.zeros(n_out, dtype=dtype)
            self.params.append(self.b)
        self._x = None

    def forward(self, x):
        self._x = x
        out = x @ self.W
        if self.b is not None:
            out += self.b
        return out

    def backward(self, dout):
        x = self._x
        self.grads = [x.T @ dout]
        if self.b is not None:
            self.grads.append(dout.sum(axis=0))
        return dout @ self.W.T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Conv1D(Layer):
    """Valid temporal convolution, ``(b, T, C) -> (b, T_out, F)``, via im2col."""

    def __init__(self, in_channels: int, filters: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float32):
        super().__init__()
        if min(in_channels, filters, kernel, stride) <= 0:
            raise ValueError("conv dimensions must be positive")
        self.kernel, self.stride = kernel, stride
        fan_in = kernel * in_channels
        limit = np.sqrt(6.0 / fan_in)
        self.W = rng.uniform(-limit, limit, size=(fan_in, filters)).astype(dtype)
        self.b = np.zeros(filters, dtype=dtype)
        self.params = [self.W, self.b]

    def output_length(self, t: int) -> int:
        return (t - self.kernel) // self.stride + 1

    def forward(self, x):
        b, t, c = x.shape
        if t < self.kernel:
            raise ValueError(f"sequence length {t} shorter than kernel {self.kernel}")
        # (b, T', C, k) -> (b, T', k, C) so columns match W's (k*C) row ordering
        cols = sliding_window_view(x, self.kernel, axis=1)[:, :: self.stride]
        cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(b, -1, self.kernel * c)
        self._cols, self._in_shape = cols, x.shape
        return cols @ self.W + self.b

    def backward(self, dout):
        b, t, c = self._in_shape
        f = dout.shape[-1]
        cols = self._cols
        self.grads = [cols.reshape(-1, cols.shape[-1]).T @ dout.reshape(-1, f),
                      dout.sum(axis=(0, 1))]
        dcols = (dout @ self.W.T).reshape(b, -1, self.kernel, c)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        t_out = dcols.shape[1]
        span = self.stride * (t_out - 1) + 1
        for j in range(self.kernel):
            dx[:, j : j + span : self.stride] += dcols[:, :, j]
        return dx


class GlobalAvgPool1D(Layer):
    def forward(self, x):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, dout):
        return np.repeat(dout[:, None, :] / self._t, self._t, axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                           class_weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``w[y] * -log softmax(z)[y]`` over the batch, and d loss / d logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(n)
    w = class_weights[labels].astype(logits.dtype)
    loss = float(np.mean(-w * log_p[rows, labels]))
    dlogits = np.exp(log_p)
    dlogits[rows, labels] -= 1.0
    dlogits *= (w / n)[:, None]
    return loss, dlogits
