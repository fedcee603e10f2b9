"""Tensor conventions and validation helpers.

Tensors are plain numpy arrays: dense, row-major, 32-bit floats by default.
Images are channel-last ``(H, W, C)``; batches prepend an axis.  Metric
accumulation happens in 64-bit even when activations are 32-bit.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError

DTYPE = np.float32


def as_tensor(data, dtype=DTYPE) -> np.ndarray:
    """Coerce to a contiguous array of the given dtype and verify finiteness."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")
    return arr


def check_shape(arr: np.ndarray, expected: tuple[int, ...], where: str) -> np.ndarray:
    if tuple(arr.shape) != tuple(expected):
        raise ShapeError(f"{where}: expected shape {tuple(expected)}, got {tuple(arr.shape)}")
    return arr


def one_hot(label: int, n_classes: int, dtype=np.float64) -> np.ndarray:
    if not 0 <= label < n_classes:
        raise ShapeError(f"label {label} out of range for {n_classes} classes")
    vec = np.zeros(n_classes, dtype=dtype)
    vec[label] = 1.0
    return vec
