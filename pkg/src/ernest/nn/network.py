"""Sequential networks: parameter ownership, forward and backward passes."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import CacheError, ShapeError
from .layers import LayerSpec

_ids = itertools.count()


@dataclass
class ActivationRecord:
    """Everything backward needs from one forward pass."""

    net_id: int
    version: int
    start: int
    stop: int
    caches: list
    outputs: list = field(default_factory=list)


class Network:
    """An ordered stack of layers with their parameters.

    ``version`` increases whenever parameters change, so a backward pass can
    refuse an activation record taken against older weights.
    """

    def __init__(self, layers, input_shape, params=None, rng=None):
        self.layers: tuple[LayerSpec, ...] = tuple(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.out_shape(self.shapes[-1])))
        if params is None:
            if rng is None:
                raise ValueError("need an rng to initialise parameters")
            params = [
                layer.init_params(shape, rng)
                for layer, shape in zip(self.layers, self.shapes)
            ]
        if len(params) != len(self.layers):
            raise ShapeError("one parameter dict per layer required")
        self.params = [
            {k: np.asarray(v, dtype=np.float64) for k, v in p.items()} for p in params
        ]
        self._check_param_shapes()
        self.id = next(_ids)
        self.version = 0

    def _check_param_shapes(self):
        scratch = np.random.default_rng(0)
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes)):
            expected = layer.init_params(shape, scratch)
            got = self.params[i]
            if expected.keys() != got.keys() or any(
                expected[k].shape != got[k].shape for k in expected
            ):
                raise ShapeError(f"parameters of layer {i} ({layer.kind}) do not match its spec")

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def param_count(self) -> int:
        return sum(v.size for p in self.params for v in p.values())

    def copy(self) -> Network:
        return Network(self.layers, self.input_shape, [{k: v.copy() for k, v in p.items()} for p in self.params])

    def slice(self, start: int, stop: int | None = None) -> Network:
        """Sub-network over layers ``[start, stop)`` with copied parameters."""
        stop = len(self.layers) if stop is None else stop
        params = [{k: v.copy() for k, v in p.items()} for p in self.params[start:stop]]
        return Network(self.layers[start:stop], self.shapes[start], params)

    def bump(self):
        self.version += 1

    def forward(self, x, stop=None, keep_outputs=False):
        return forward(self, x, stop=stop, keep_outputs=keep_outputs)

    def predict(self, x, stop=None, chunk=4096):
        """Forward pass without keeping an activation record."""
        x = np.asarray(x, dtype=np.float64)
        if len(x) <= chunk:
            return forward(self, x, stop=stop)[0]
        return np.concatenate(
            [forward(self, x[i : i + chunk], stop=stop)[0] for i in range(0, len(x), chunk)]
        )

    def __repr__(self):
        kinds = ", ".join(l.kind for l in self.layers)
        return f"Network([{kinds}], input={self.input_shape}, params={self.param_count})"


def forward(net: Network, batch, stop=None, keep_outputs=False):
    """Run layers ``[0, stop)`` and return ``(output, ActivationRecord)``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"batch shape {x.shape[1:]} does not match input {net.input_shape}")
    stop = len(net.layers) if stop is None else stop
    caches, outputs = [], []
    for layer, params in zip(net.layers[:stop], net.params[:stop]):
        x, cache = layer.forward(params, x)
        caches.append(cache)
        if keep_outputs:
            outputs.append(x)
    return x, ActivationRecord(net.id, net.version, 0, stop, caches, outputs)


def backward(net: Network, cache: ActivationRecord, loss_grad, extra_grads=None, input_grad=False):
    """Backpropagate ``loss_grad`` (gradient w.r.t. the forward output).

    ``extra_grads`` maps a layer index to an additional gradient on that
    layer's output (used for activity penalties on inner layers). Returns the
    parameter gradients, plus the input gradient when ``input_grad`` is set.
    """
    if cache.net_id != net.id or cache.version != net.version:
        raise CacheError("activation record is stale for this network")
    if len(cache.caches) != cache.stop:
        raise CacheError("activation record is incomplete")
    extra_grads = extra_grads or {}
    grads = [None] * len(net.layers)
    for i in range(len(net.layers)):
        if i >= cache.stop:
            grads[i] = {k: np.zeros_like(v) for k, v in net.params[i].items()}
    dy = np.asarray(loss_grad, dtype=np.float64)
    for i in reversed(range(cache.stop)):
        if i in extra_grads:
            dy = dy + extra_grads[i]
        need_dx = input_grad or i > 0
        dy, grads[i] = net.layers[i].backward(net.params[i], cache.caches[i], dy, need_dx=need_dx)
    if input_grad:
        return grads, dy
    return grads
