"""Loss functions returning ``(loss, gradient)`` pairs."""

import numpy as np


def loss_softmax_ce(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_norm[:, None]
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def loss_sparse_mse(inputs, reconstruction, hidden, lam):
    """MSE reconstruction loss plus ``lam * mean(|hidden|)``.

    Returns ``(loss, grad_reconstruction, grad_hidden)``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    if inputs.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch {inputs.shape} vs {reconstruction.shape}")
    diff = reconstruction - inputs
    mse = np.mean(diff * diff)
    grad_rec = 2.0 * diff / diff.size
    if hidden is None or lam == 0:
        grad_hidden = None if hidden is None else np.zeros_like(hidden)
        return float(mse), grad_rec, grad_hidden
    hidden = np.asarray(hidden, dtype=np.float64)
    penalty = lam * np.mean(np.abs(hidden))
    grad_hidden = lam * np.sign(hidden) / hidden.size
    return float(mse + penalty), grad_rec, grad_hidden
