"""Input validation helpers shared across the package.

Conventions follow scikit-learn's ``check_array`` style: validate, coerce
to a canonical dtype, raise ``ValueError`` with a specific message.
"""

from __future__ import annotations

import os

import numpy as np


def check_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float array, optionally enforcing length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_matrix(x, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array, optionally enforcing column count."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_nonzero_norm(x: np.ndarray, name: str = "vector") -> np.ndarray:
    norms = np.linalg.norm(np.atleast_2d(x), axis=-1)
    if np.any(norms == 0.0):
        raise ValueError(f"{name} has zero norm; cosine similarity undefined")
    return x


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return float(value)


def resolve_seed(seed: int | None, default: int = 0) -> int:
    """Explicit seed wins; REFRANK_SEED is the environment fallback."""
    if seed is not None:
        return int(seed)
    env = os.environ.get("REFRANK_SEED")
    if env is not None:
        return int(env)
    return default
