"""Adam over a dict of parameter arrays."""

from collections import OrderedDict
from typing import Dict

import numpy as np

DEFAULT_LEARNING_RATE = 2e-4
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8


class Adam:
    def __init__(self, lr: float = DEFAULT_LEARNING_RATE,
                 betas=DEFAULT_BETAS, eps: float = DEFAULT_EPS):
        if lr < 0:
            raise ValueError("Learning rate must be non-negative: %r" % lr)
        if not all(0 <= b < 1 for b in betas):
            raise ValueError("Adam betas must lie in [0, 1): %r" % (betas,))
        self.lr = lr  # type: float
        self.beta1, self.beta2 = betas
        self.eps = eps  # type: float
        self.t = 0  # type: int
        # First and second moment estimates, by parameter name
        self.m = OrderedDict()  # type: Dict[str, np.ndarray]
        self.v = OrderedDict()  # type: Dict[str, np.ndarray]

    def __repr__(self):
        return "Adam(lr=%g, t=%d)" % (self.lr, self.t)

    def load_state(self, t: int, m: Dict[str, np.ndarray],
                   v: Dict[str, np.ndarray]) -> None:
        self.t = t
        self.m = OrderedDict((k, np.array(a, dtype=np.float64))
                             for k, a in m.items())
        self.v = OrderedDict((k, np.array(a, dtype=np.float64))
                             for k, a in v.items())

    def step(self, params: Dict[str, np.ndarray],
             grads: Dict[str, np.ndarray]) -> None:
        """Update params in place."""
        self.t += 1
        correction1 = 1 - self.beta1 ** self.t
        correction2 = 1 - self.beta2 ** self.t
        for name, param in params.items():
            grad = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            if self.lr:
                param -= self.lr * (m / correction1) / (
                    np.sqrt(v / correction2) + self.eps)
