"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter


def adam_step(value, grad, m, v, lr, beta1, beta2, eps, t):
    """One bias-corrected Adam update. Returns (new_value, new_m, new_v).

    t is the 1-based step count.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Holds per-parameter moment estimates keyed by parameter name."""

    def __init__(self, params: list[Parameter], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        """Apply one update to every parameter that has a gradient."""
        self.t += 1
        for p in self.params:
            if p.grad is None:
                continue
            p.data, self.m[p.name], self.v[p.name] = adam_step(
                p.data, p.grad, self.m[p.name], self.v[p.name],
                self.lr, self.beta1, self.beta2, self.eps, self.t,
            )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
