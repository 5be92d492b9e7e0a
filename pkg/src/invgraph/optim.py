"""Adam over named parameter tensors (in-place data updates)."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


class Adam:
    """Standard Adam (beta1=0.9, beta2=0.999, eps=1e-8) with bias correction.

    Parameters are (name, Tensor) pairs; step() reads gradients from the
    dict backward() returns and mutates each tensor's data.  A parameter
    absent from the gradient dict (not used by this tape's forward) is left
    untouched, and its moments do not decay.
    """

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        if not self.params:
            raise ContractError("Adam: no parameters")
        if lr <= 0 or not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0) or eps <= 0:
            raise ContractError(f"Adam: bad hyperparameters lr={lr} betas=({beta1},{beta2}) eps={eps}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
