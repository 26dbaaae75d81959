"""Adam optimizer."""

import numpy as np


class Adam:
    """Adam with bias-corrected moment estimates, one state slot per parameter."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = None
        self.v = None
        self.t = 0

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg or {})
        cfg.pop("algorithm", None)
        return cls(**cfg)

    def config(self):
        return {"algorithm": "adam", "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "epsilon": self.epsilon}

    def step(self, net, grads):
        if self.m is None:
            self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
            self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(net.params, grads, self.m, self.v):
            for k in p:
                m[k] *= self.beta1
                m[k] += (1.0 - self.beta1) * g[k]
                v[k] *= self.beta2
                v[k] += (1.0 - self.beta2) * (g[k] * g[k])
                p[k] -= self.lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + self.epsilon)
        net.bump()
