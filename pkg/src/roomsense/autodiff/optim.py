"""Adam with independent parameter groups (main lr vs depth-head lr)."""

from __future__ import annotations

import numpy as np

from ..errors import GradientError


def adam_step(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update. Arrays are modified in place; ``t`` is 1-based."""
    if g is None:
        raise GradientError("adam_step: missing gradient")
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Groups: [{"params": [...], "lr": float}, ...]. State is per tensor."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [{"params": list(g["params"]), "lr": float(g["lr"])} for g in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {}
        self._v = {}
        seen = set()
        for g in self.groups:
            for p in g["params"]:
                if id(p) in seen:
                    raise GradientError("parameter appears in more than one group")
                seen.add(id(p))

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self):
        """Apply one update to every parameter that received a gradient."""
        self.t += 1
        for g in self.groups:
            for p in g["params"]:
                if p.grad is None:
                    continue
                key = id(p)
                if key not in self._m:
                    self._m[key] = np.zeros_like(p.data)
                    self._v[key] = np.zeros_like(p.data)
                adam_step(p.data, p.grad, self._m[key], self._v[key], self.t,
                          g["lr"], self.beta1, self.beta2, self.eps)
