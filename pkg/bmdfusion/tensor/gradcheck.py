"""central finite-difference gradient checks"""
from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from bmdfusion.tensor.core import Tensor, no_grad

DEFAULT_STEP = 1e-5


def numerical_gradient(f: Callable[[], Tensor], target: Tensor, h: float = DEFAULT_STEP) -> np.ndarray:
    """d f() / d target.data by central differences; f must be deterministic"""
    grad = np.zeros_like(target.data, dtype=np.float64)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = float(f().data.sum())
            flat[i] = orig - h
            minus = float(f().data.sum())
            flat[i] = orig
            out[i] = (plus - minus) / (2.0 * h)
    return grad


def analytic_gradients(f: Callable[[], Tensor], targets: Sequence[Tensor]) -> List[np.ndarray]:
    for t in targets:
        t.zero_grad()
    f().backward()
    return [t.grad.astype(np.float64).copy() for t in targets]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """norm-wise: ||a - n|| / max(||a||, ||n||, 1e-12)"""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(f: Callable[[], Tensor], targets: Sequence[Tensor],
                    h: float = DEFAULT_STEP) -> float:
    """largest relative error over all targets; f returns a scalar tensor"""
    analytic = analytic_gradients(f, targets)
    errors = [relative_error(a, numerical_gradient(f, t, h)) for a, t in zip(analytic, targets)]
    return max(errors)
