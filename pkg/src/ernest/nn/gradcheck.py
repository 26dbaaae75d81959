"""Central finite-difference check of backpropagated gradients."""

from dataclasses import dataclass, field

import numpy as np

from .network import backward, forward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_layer: dict = field(default_factory=dict)
    input_error: float | None = None
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        worst = self.max_rel_error
        if self.input_error is not None:
            worst = max(worst, self.input_error)
        return worst < self.tolerance


def _rel_error(a, n, floor):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(net, x, tolerance=1e-4, h=1e-5, seed=0, check_input=False, floor=1e-3):
    """Compare analytic parameter gradients with central differences.

    The scalar probed is ``sum(R * net(x))`` for a fixed random ``R``, which
    exercises every output unit. Relative error is measured against
    ``max(|analytic|, |numeric|, floor)``. A network without parameters
    passes vacuously unless ``check_input`` is set.
    """
    x = np.array(x, dtype=np.float64)
    out, _ = forward(net, x)
    probe = np.random.default_rng(seed).standard_normal(out.shape)

    def objective():
        return float(np.sum(forward(net, x)[0] * probe))

    _, cache = forward(net, x)
    grads, dx = backward(net, cache, probe, input_grad=True)

    worst, per_layer, n_checked = 0.0, {}, 0
    for i, params in enumerate(net.params):
        layer_worst = 0.0
        for name, value in params.items():
            numeric = np.empty_like(value)
            flat, nflat = value.reshape(-1), numeric.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                f_plus = objective()
                flat[j] = orig - h
                f_minus = objective()
                flat[j] = orig
                nflat[j] = (f_plus - f_minus) / (2 * h)
            err = _rel_error(grads[i][name], numeric, floor)
            n_checked += err.size
            if err.size:
                layer_worst = max(layer_worst, float(err.max()))
        if params:
            per_layer[f"{i}:{net.layers[i].kind}"] = layer_worst
        worst = max(worst, layer_worst)

    input_error = None
    if check_input:
        numeric = np.empty_like(x)
        flat, nflat = x.reshape(-1), numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = objective()
            flat[j] = orig - h
            f_minus = objective()
            flat[j] = orig
            nflat[j] = (f_plus - f_minus) / (2 * h)
        input_error = float(_rel_error(dx, numeric, floor).max())
    return GradCheckReport(worst, tolerance, per_layer, input_error, n_checked)
