"""Unit-vector helpers shared by the memory and simulation layers.

All appearance embeddings in this package are L2-normalized float64
vectors; these helpers centralize the normalization and similarity
conventions so every module agrees on them.
"""

from __future__ import annotations

import numpy as np

UNIT_NORM_ATOL = 1e-6


def normalize(vec) -> np.ndarray:
    """Return ``vec`` scaled to unit L2 norm.

    Raises ValueError on non-1D input, non-finite entries, or a
    (near-)zero vector; a silent NaN here would poison every similarity
    downstream.
    """
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite entries")
    norm = float(np.linalg.norm(arr))
    if norm < 1e-12:
        raise ValueError("cannot normalize a zero-length vector")
    return arr / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two unit vectors (plain dot product)."""
    return float(np.dot(a, b))


def is_unit(vec: np.ndarray, atol: float = UNIT_NORM_ATOL) -> bool:
    return abs(float(np.linalg.norm(vec)) - 1.0) <= atol


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Draw a uniformly random direction on the unit sphere."""
    return normalize(rng.standard_normal(dim))
