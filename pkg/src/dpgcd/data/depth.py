"""Depth-prior ingestion.

The monocular depth model runs outside this package; its relative-depth
output arrives as a single-channel raster. When no file exists, a caller may
supply a fallback that synthesises a proxy.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import DataError
from ..prng import Prng
from .raster import read_raster


def ingest_depth_prior(path, fallback: Callable[[], np.ndarray] | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        if fallback is None:
            raise DataError(f"depth prior {path} not found and no fallback configured")
        return np.asarray(fallback(), dtype=np.float32)
    arr = read_raster(path)
    if arr.ndim != 2:
        raise DataError(f"depth prior {path} must be single-channel, got shape {arr.shape}")
    return arr


def depth_proxy(dsm_t2: np.ndarray, gamma: float, noise_sigma: float, rng: Prng) -> np.ndarray:
    """Monotone distortion of the T2 surface standing in for a relative-depth estimate."""
    z = np.asarray(dsm_t2, dtype=np.float64)
    lo, hi = z.min(), z.max()
    norm = (z - lo) / (hi - lo) if hi > lo else np.zeros_like(z)
    noisy = norm**gamma + noise_sigma * rng.normal(z.size).reshape(z.shape)
    return noisy.astype(np.float32)
