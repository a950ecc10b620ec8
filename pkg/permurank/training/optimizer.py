"""AdamW over named numpy arrays."""

import logging

import numpy as np

from permurank.models.params import ModelParams

log = logging.getLogger(__name__)


class AdamW:
    """Adaptive moments with decoupled weight decay, updating parameters in place."""

    def __init__(
        self,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-2,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.first: dict[str, np.ndarray] = {}
        self.second: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        """Apply one update.

        Args:
            params: Parameters to update in place.
            grads: Gradient of the loss per parameter name; missing names are left untouched.

        Notes:
            1. Shrink each array by lr * weight_decay (decoupled from the moments).
            2. Update bias-corrected first and second moments and take the Adam step.

        """
        self.step_count += 1
        lr = self.learning_rate
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for name, grad in grads.items():
            value = params.arrays[name]
            m = self.first.get(name, np.zeros_like(value))
            v = self.second.get(name, np.zeros_like(value))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.first[name], self.second[name] = m, v
            value -= lr * self.weight_decay * value
            value -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
