"""Low-level array helpers: box sums, clamped differences, pyramid resampling."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def box_sum(data: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2r+1)^3 window centered at each voxel, truncated at borders.

    Returns float64 regardless of input dtype.
    """
    size = 2 * radius + 1
    arr = np.asarray(data, dtype=np.float64)
    # uniform_filter with zero padding gives the truncated-window mean.
    return ndimage.uniform_filter(arr, size=size, mode="constant", cval=0.0) * float(size**3)


def box_count(shape, radius: int) -> np.ndarray:
    """Number of in-bounds voxels in each truncated window."""
    return box_sum(np.ones(shape, dtype=np.float64), radius)


def clamped_central_diff(data: np.ndarray, axis: int, step: int = 1) -> np.ndarray:
    """(data[i+s] - data[i-s]) / (2s) with indices clamped to the array."""
    n = data.shape[axis]
    idx_hi = np.minimum(np.arange(n) + step, n - 1)
    idx_lo = np.maximum(np.arange(n) - step, 0)
    hi = np.take(data, idx_hi, axis=axis)
    lo = np.take(data, idx_lo, axis=axis)
    return (hi - lo) / (2.0 * step)


def downsample2(data: np.ndarray) -> np.ndarray:
    """Halve each spatial axis by 2x2x2 block averaging (edge-replicated when odd).

    Accepts (D, H, W) or (C, D, H, W); channels are preserved.
    """
    arr = np.asarray(data, dtype=np.float64)
    spatial = arr.shape[-3:]
    pad = [(0, 0)] * (arr.ndim - 3) + [(0, n % 2) for n in spatial]
    b = np.pad(arr, pad, mode="edge")
    s = (
        b[..., 0::2, 0::2, 0::2] + b[..., 0::2, 0::2, 1::2]
        + b[..., 0::2, 1::2, 0::2] + b[..., 0::2, 1::2, 1::2]
        + b[..., 1::2, 0::2, 0::2] + b[..., 1::2, 0::2, 1::2]
        + b[..., 1::2, 1::2, 0::2] + b[..., 1::2, 1::2, 1::2]
    )
    return 0.125 * s


def downsample2_mask(mask: np.ndarray) -> np.ndarray:
    """Halve a boolean mask; a coarse voxel is set when any block voxel is."""
    pad = [(0, n % 2) for n in mask.shape]
    b = np.pad(mask, pad, mode="edge")
    out = np.zeros(tuple((n + 1) // 2 for n in mask.shape), dtype=bool)
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                out |= b[dz::2, dy::2, dx::2]
    return out
