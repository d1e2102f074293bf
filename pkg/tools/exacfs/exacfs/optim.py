"""SGD with momentum and a step learning-rate schedule."""

from typing import List, Sequence

import numpy as np

from .autodiff import Tensor


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient.

    v <- momentum * v + (grad + weight_decay * p);  p <- p - lr * v
    """

    def __init__(
        self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0
    ):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: List[np.ndarray] = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        for param, velocity in zip(self.params, self.velocity):
            if param.grad is None:
                continue
            grad = param.grad + self.weight_decay * param.data
            velocity *= self.momentum
            velocity += grad
            param.data -= self.lr * velocity


def step_lr(base_lr: float, epoch: int, epochs: int, milestones=(0.6, 0.85), gamma: float = 0.1) -> float:
    """Learning rate for a 0-based epoch: multiplied by gamma at each milestone fraction."""
    drops = sum(1 for fraction in milestones if epoch >= max(1, int(fraction * epochs)))
    return base_lr * gamma**drops
