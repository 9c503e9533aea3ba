"""Shared finite-difference oracles, independent of the library's analytic paths."""

from __future__ import annotations

import numpy as np


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        out[j] = (f(x + step) - f(x - step)) / (2.0 * h)
    return out


def fd_laplacian(f, x: np.ndarray, h: float = 0.05) -> float:
    """Five-point-per-axis (fourth-order) finite-difference Laplacian."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        total += (
            -f(x + 2 * step) + 16 * f(x + step) - 30 * f(x) + 16 * f(x - step) - f(x - 2 * step)
        ) / (12.0 * h * h)
    return total
