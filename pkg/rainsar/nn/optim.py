"""RMSProp with gradient clipping."""

from collections.abc import Sequence
from typing import Literal

import numpy as np

from rainsar.errors import NonFiniteGradient
from rainsar.nn.tensor import Tensor


def clip_gradients(grads: Sequence[np.ndarray], clip: float, mode: Literal["norm", "value"] = "norm") -> list[np.ndarray]:
    """Global-norm rescaling to ``clip`` (or elementwise clamping to [-clip, clip])."""
    if clip <= 0:
        return list(grads)
    if mode == "value":
        return [np.clip(g, -clip, clip) for g in grads]
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if total <= clip:
        return list(grads)
    scale = clip / total
    return [g * scale for g in grads]


class RMSProp:
    """acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(acc) + eps), after clipping."""

    def __init__(
        self,
        params: Sequence[Tensor],
        learning_rate: float = 1e-5,
        decay: float = 0.9,
        epsilon: float = 1e-8,
        clip_norm: float = 1.0,
        clip_mode: Literal["norm", "value"] = "norm",
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.clip_mode = clip_mode
        self.accumulators = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"Non-finite gradient for parameter {p.name or '?'} {p.shape}")
        grads = clip_gradients(grads, self.clip_norm, self.clip_mode)
        for p, acc, g in zip(self.params, self.accumulators, grads):
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            p.data -= (self.learning_rate * g / (np.sqrt(acc) + self.epsilon)).astype(p.data.dtype)
        self.steps += 1

    def hyperparameters(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "decay": self.decay,
            "epsilon": self.epsilon,
            "clip_norm": self.clip_norm,
            "clip_mode": self.clip_mode,
            "steps": self.steps,
        }

    def load_accumulators(self, arrays: Sequence[np.ndarray]) -> None:
        if len(arrays) != len(self.accumulators):
            raise ValueError("accumulator count does not match parameters")
        self.accumulators = [np.asarray(a, dtype=p.data.dtype).reshape(p.shape).copy() for a, p in zip(arrays, self.params)]
