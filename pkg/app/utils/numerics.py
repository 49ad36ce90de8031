"""
app/utils/numerics.py
Вспомогательные численные функции: конечные разности и проверка значений.
"""
from typing import Callable, Optional
import numpy as np

from app.core.exceptions import RejectedInputError


def fd_step(x: np.ndarray, rel: float = 1e-4) -> np.ndarray:
    return rel * np.maximum(np.abs(x), 1.0)


def fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                step: Optional[np.ndarray] = None) -> np.ndarray:
    """Центральная разность."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if step is None else step
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        grad[i] = (fn(x + e) - fn(x - e)) / (2 * h[i])
    return grad


def fd_hessian(fn: Callable[[np.ndarray], float], x: np.ndarray,
               step: Optional[np.ndarray] = None) -> np.ndarray:
    """Гессиан центральными разностями (симметризованный)."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if step is None else step
    n = x.size
    f0 = fn(x)
    hess = np.zeros((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hess[i, i] = (fn(x + ei) - 2 * f0 + fn(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            value = (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)) / (4 * h[i] * h[j])
            hess[i, j] = hess[j, i] = value
    return hess


def require_finite(values: np.ndarray, what: str = "state") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise RejectedInputError(f"non-finite {what}")
    return values
