"""This module contains all tests for d4decoder."""

from collections.abc import Callable
from pathlib import Path
import numpy as np


test_folder = Path(__file__).resolve().parents[0]


def numerical_gradient(
    func: Callable[[np.ndarray], float], params: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(params)
    for i in range(len(params)):
        step = np.zeros_like(params)
        step[i] = eps
        grad[i] = (func(params + step) - func(params - step)) / (2 * eps)
    return grad
