"""Central finite differences for verifying analytic gradients."""

from __future__ import annotations

import numpy as np


def numerical_gradient(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` w.r.t. every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = fn(x)
        x[idx] = orig - h
        f_minus = fn(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
        it.iternext()
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       zero_floor: float = 1e-8) -> float:
    """Worst-case |a - n| / max(|a|, |n|), treating near-zero pairs as exact."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    rel = np.where(scale < zero_floor, 0.0, err / np.maximum(scale, zero_floor))
    return float(rel.max()) if rel.size else 0.0
