"""Layer specifications and their forward/backward kernels.

Each spec is an immutable description of a layer. Parameters live outside the
spec (in :class:`ernest.nn.network.Network`), so every kernel is a pure
function of ``(params, input)``. Shapes never include the batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _fan_in_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class LayerSpec:
    kind: ClassVar[str] = ""

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def init_params(self, in_shape: tuple, rng: np.random.Generator) -> dict:
        return {}

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, dy, need_dx=True):
        """Return ``(dx, grads)`` where ``grads`` mirrors ``params``.

        ``dx`` may be ``None`` when ``need_dx`` is false.
        """
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class Conv1D(LayerSpec):
    """Valid (unpadded) 1D convolution over channels-last ``(L, C)`` inputs.

    A rank-1 input shape ``(L,)`` is read as a single-channel signal.
    """

    filters: int
    kernel: int
    stride: int = 1
    kind: ClassVar[str] = "conv1d"

    def _dims(self, in_shape):
        if len(in_shape) == 1:
            return in_shape[0], 1
        if len(in_shape) == 2:
            return in_shape
        raise ShapeError(f"Conv1D expects (L,) or (L, C) input, got {in_shape}")

    def out_shape(self, in_shape):
        length, _ = self._dims(in_shape)
        if self.stride < 1:
            raise ShapeError("Conv1D stride must be >= 1")
        if self.kernel > length:
            raise ShapeError(f"kernel {self.kernel} exceeds input length {length}")
        return ((length - self.kernel) // self.stride + 1, self.filters)

    def init_params(self, in_shape, rng):
        _, cin = self._dims(in_shape)
        fan_in = cin * self.kernel
        return {
            "W": _fan_in_uniform(rng, (self.filters, cin, self.kernel), fan_in),
            "b": np.zeros(self.filters),
        }

    def forward(self, params, x):
        squeeze = x.ndim == 2
        x3 = x[:, :, None] if squeeze else x
        n, _, cin = x3.shape
        windows = sliding_window_view(x3, self.kernel, axis=1)[:, :: self.stride]
        lout = windows.shape[1]
        cols = windows.reshape(n * lout, cin * self.kernel)
        y = cols @ params["W"].reshape(self.filters, -1).T + params["b"]
        return y.reshape(n, lout, self.filters), (cols, x3.shape, squeeze)

    def backward(self, params, cache, dy, need_dx=True):
        cols, xshape, squeeze = cache
        n, _, cin = xshape
        lout = dy.shape[1]
        dyr = dy.reshape(n * lout, self.filters)
        grads = {
            "W": (dyr.T @ cols).reshape(params["W"].shape),
            "b": dyr.sum(axis=0),
        }
        if not need_dx:
            return None, grads
        dcols = (dyr @ params["W"].reshape(self.filters, -1)).reshape(n, lout, cin, self.kernel)
        dx = np.zeros(xshape)
        span = self.stride * (lout - 1) + 1
        for j in range(self.kernel):
            dx[:, j : j + span : self.stride, :] += dcols[..., j]
        if squeeze:
            dx = dx[:, :, 0]
        return dx, grads


@dataclass(frozen=True)
class Dense(LayerSpec):
    units: int
    kind: ClassVar[str] = "dense"

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"Dense expects a flat input, got {in_shape}")
        return (self.units,)

    def init_params(self, in_shape, rng):
        fan_in = in_shape[0]
        return {
            "W": _fan_in_uniform(rng, (fan_in, self.units), fan_in),
            "b": np.zeros(self.units),
        }

    def forward(self, params, x):
        return x @ params["W"] + params["b"], x

    def backward(self, params, cache, dy, need_dx=True):
        x = cache
        grads = {"W": x.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ params["W"].T if need_dx else None), grads


@dataclass(frozen=True)
class ReLU(LayerSpec):
    kind: ClassVar[str] = "relu"

    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy, need_dx=True):
        return dy * cache, {}


@dataclass(frozen=True)
class MaxPool1D(LayerSpec):
    """Non-overlapping max pooling over ``(L, C)``; a remainder shorter than ``width`` is dropped."""

    width: int
    kind: ClassVar[str] = "maxpool1d"

    def out_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"MaxPool1D expects (L, C) input, got {in_shape}")
        if not 1 <= self.width <= in_shape[0]:
            raise ShapeError(f"pool width {self.width} invalid for length {in_shape[0]}")
        return (in_shape[0] // self.width, in_shape[1])

    def forward(self, params, x):
        n, length, c = x.shape
        lout = length // self.width
        xr = x[:, : lout * self.width].reshape(n, lout, self.width, c)
        best = xr[:, :, 0]
        for k in range(1, self.width):
            best = np.maximum(best, xr[:, :, k])
        # first maximum wins on ties
        masks, taken = [], None
        for k in range(self.width):
            hit = xr[:, :, k] == best
            if taken is None:
                taken = hit
            else:
                hit &= ~taken
                taken = taken | hit
            masks.append(hit)
        mask = np.stack(masks, axis=2)
        return best, (mask, x.shape)

    def backward(self, params, cache, dy, need_dx=True):
        mask, xshape = cache
        n, length, c = xshape
        lout = dy.shape[1]
        dx = np.zeros(xshape)
        dxr = dx[:, : lout * self.width].reshape(n, lout, self.width, c)
        for k in range(self.width):
            np.multiply(dy, mask[:, :, k], out=dxr[:, :, k])
        return dx, {}


@dataclass(frozen=True)
class GlobalAveragePool(LayerSpec):
    kind: ClassVar[str] = "gap"

    def out_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"GlobalAveragePool expects (L, C) input, got {in_shape}")
        return (in_shape[1],)

    def forward(self, params, x):
        return x.mean(axis=1), x.shape

    def backward(self, params, cache, dy, need_dx=True):
        n, length, c = cache
        return np.broadcast_to(dy[:, None, :] / length, cache), {}


@dataclass(frozen=True)
class Softmax(LayerSpec):
    kind: ClassVar[str] = "softmax"

    def forward(self, params, x):
        y = softmax(x)
        return y, y

    def backward(self, params, cache, dy, need_dx=True):
        y = cache
        return y * (dy - (dy * y).sum(axis=1, keepdims=True)), {}


@dataclass(frozen=True)
class Sigmoid(LayerSpec):
    kind: ClassVar[str] = "sigmoid"

    def forward(self, params, x):
        y = sigmoid(x)
        return y, y

    def backward(self, params, cache, dy, need_dx=True):
        y = cache
        return dy * y * (1.0 - y), {}


def softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv1D, Dense, ReLU, MaxPool1D, GlobalAveragePool, Softmax, Sigmoid)
}


def spec_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ShapeError(f"unknown layer kind {kind!r}") from None
    return cls(**d)
