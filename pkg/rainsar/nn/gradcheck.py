"""Central-difference gradient checks (float64)."""

from collections.abc import Callable, Sequence

import numpy as np

from rainsar.nn.tensor import Tensor


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """d sum(fn()) / dx by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(np.sum(fn().data))
        flat[i] = orig - h
        minus = float(np.sum(fn().data))
        flat[i] = orig
        grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
    return grad


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.zero_grad()
    out = fn()
    out.backward(np.ones_like(out.data))
    return [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b)) / scale


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-4) -> float:
    """Largest relative error between analytic and numerical gradients over ``inputs``."""
    analytic = analytic_gradients(fn, inputs)
    return max(relative_error(a, numerical_gradient(fn, x, h)) for a, x in zip(analytic, inputs))
