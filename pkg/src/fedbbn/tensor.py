"""Numeric carrier conventions.

All numeric data is carried as C-contiguous float64 numpy arrays (row-major,
so ``prod(shape) == data.size`` by construction).  The helpers here enforce
dtype, contiguity, and finiteness at module boundaries; everything downstream
may assume them.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch

Tensor = np.ndarray


def as_f64(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 array, rejecting non-finite entries."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name} contains non-finite entries")
    return arr


def as_batch(x, width: int | None = None, name: str = "batch") -> np.ndarray:
    """Coerce to a finite (B, d) float64 matrix, optionally checking d."""
    arr = as_f64(x, name)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if width is not None and arr.shape[1] != width:
        raise ShapeMismatch(
            f"{name} width {arr.shape[1]} does not match expected {width}"
        )
    return arr
