"""Mini-batch training loop and the two objectives the pipeline needs."""

import logging

import numpy as np

from ..errors import TrainingDiverged
from .layers import Softmax
from .losses import loss_softmax_ce, loss_sparse_mse
from .network import backward, forward

log = logging.getLogger(__name__)


class SoftmaxCE:
    """Cross-entropy on the logits; a trailing Softmax layer is skipped."""

    def __call__(self, net, xb, yb):
        stop = len(net.layers)
        if stop and isinstance(net.layers[-1], Softmax):
            stop -= 1
        logits, cache = forward(net, xb, stop=stop)
        loss, grad = loss_softmax_ce(logits, yb)
        return loss, backward(net, cache, grad)


class SparseMSE:
    """Reconstruction MSE with an L1 activity penalty on one inner layer's output."""

    def __init__(self, lam=1e-4, sparse_layer=None):
        self.lam = lam
        self.sparse_layer = sparse_layer

    def __call__(self, net, xb, yb):
        target = xb if yb is None else yb
        keep = self.sparse_layer is not None and self.lam > 0
        out, cache = forward(net, xb, keep_outputs=keep)
        hidden = cache.outputs[self.sparse_layer] if keep else None
        loss, grad, grad_hidden = loss_sparse_mse(target, out, hidden, self.lam)
        extra = {self.sparse_layer: grad_hidden} if keep else None
        return loss, backward(net, cache, grad, extra_grads=extra)


def train(net, X, Y, *, epochs, batch_size, optimizer, rng, objective, label=None):
    """Train ``net`` in place.

    Rows are reshuffled every epoch from ``rng``; the last partial batch is
    kept. Returns ``(net, history)`` with one mean loss per epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            yb = None if Y is None else Y[idx]
            loss, grads = objective(net, X[idx], yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, label)
            optimizer.step(net, grads)
            total += loss * len(idx)
        history.append(total / n)
    if label is not None:
        log.debug("%s: final loss %.5f after %d epochs", label, history[-1], epochs)
    return net, history
