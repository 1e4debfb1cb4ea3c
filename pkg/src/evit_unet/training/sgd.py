from __future__ import annotations

import numpy as np

from ..core.tensor import no_grad


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay.

    Per step: ``g = grad + wd * p``; ``v = momentum * v + g``; ``p -= lr * v``.
    Parameters without a gradient are skipped.
    """

    def __init__(self, params, lr=0.05, momentum=0.9, weight_decay=1e-4):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        with no_grad():
            for p, v in zip(self.params, self.velocity):
                if p.grad is None:
                    continue
                g = p.grad
                if self.weight_decay:
                    g = g + self.weight_decay * p.data
                if self.momentum:
                    v *= self.momentum
                    v += g
                    g = v
                p.data -= self.lr * g

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_size(self) -> int:
        return int(sum(v.size for v in self.velocity))
