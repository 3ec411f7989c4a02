"""Scalar 3D volumes and preprocessing: intensity windowing, resampling, body masks.

Conventions used throughout the toolkit:
  * arrays are (D, H, W), z-major, so flat index = (z*H + y)*W + x;
  * coordinates are (z, y, x) in voxel units;
  * spacing and origin are (sz, sy, sx) / (oz, oy, ox) in millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import interp
from .errors import NoBodyFoundError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """Scalar 3D image with voxel spacing and origin.

    Attributes:
        data: (D, H, W) float32 intensities; in [-1, 1] after windowing.
        spacing: mm per voxel along (z, y, x); strictly positive.
        origin: physical position of voxel (0, 0, 0) in mm.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise ValueError(f"origin must have three components, got {self.origin}")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BodyMask:
    """Boolean foreground mask, same grid as its source volume."""

    data: np.ndarray
    threshold: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=bool)
        if arr.ndim != 3:
            raise ValueError(f"mask data must be 3D, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())


def window_normalize(v: Volume, lo: float, hi: float) -> Volume:
    """Map intensities linearly from [lo, hi] to [-1, 1], clamping outside.

    output = clamp(2*(v - lo)/(hi - lo) - 1, -1, 1). Monotone non-decreasing
    in the input value; dims, spacing and origin are unchanged.
    """
    if not lo < hi:
        raise ValueError(f"window requires lo < hi, got ({lo}, {hi})")
    scaled = 2.0 * (v.data.astype(np.float64) - lo) / (hi - lo) - 1.0
    out = np.clip(scaled, -1.0, 1.0).astype(np.float32)
    return Volume(out, v.spacing, v.origin)


def resample_isotropic(v: Volume, target_mm: float) -> Volume:
    """Trilinearly resample onto an isotropic grid of target_mm spacing.

    New dims = round(old_dims * old_spacing / target_mm), at least 1 per
    axis; the origin is preserved and out-of-bounds samples clamp to the
    border voxel.
    """
    if target_mm <= 0:
        raise ValueError(f"target spacing must be positive, got {target_mm}")
    new_dims = tuple(
        max(1, int(np.floor(n * s / target_mm + 0.5)))
        for n, s in zip(v.dims, v.spacing)
    )
    grid = interp.voxel_grid(new_dims)
    for ax in range(3):
        grid[ax] *= target_mm / v.spacing[ax]
    vals = interp.trilinear(v.data, grid)
    out = vals.reshape(new_dims).astype(np.float32)
    return Volume(out, (target_mm,) * 3, v.origin)


def resample_labels(labels: np.ndarray, spacing, target_mm: float) -> np.ndarray:
    """Nearest-neighbor companion of resample_isotropic for label maps."""
    if target_mm <= 0:
        raise ValueError(f"target spacing must be positive, got {target_mm}")
    new_dims = tuple(
        max(1, int(np.floor(n * s / target_mm + 0.5)))
        for n, s in zip(labels.shape, spacing)
    )
    grid = interp.voxel_grid(new_dims)
    for ax in range(3):
        grid[ax] *= target_mm / spacing[ax]
    return interp.nearest(np.ascontiguousarray(labels), grid).reshape(new_dims)


def crop_volume(v: Volume, lo: tuple[int, int, int], hi: tuple[int, int, int]) -> Volume:
    """Crop to the half-open box [lo, hi) given in voxel indices."""
    lo = tuple(int(i) for i in lo)
    hi = tuple(int(i) for i in hi)
    for ax in range(3):
        if not 0 <= lo[ax] < hi[ax] <= v.dims[ax]:
            raise ValueError(f"crop bounds {lo}..{hi} invalid for dims {v.dims}")
    data = v.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    return Volume(np.ascontiguousarray(data), v.spacing, v.origin)


_CONN26 = np.ones((3, 3, 3), dtype=bool)


def compute_body_mask(v: Volume, threshold: float = -0.5) -> BodyMask:
    """Threshold, keep the largest 26-connected component, fill axial holes.

    Voxels with value > threshold form the candidate set. The largest
    26-connected component is kept (ties break to the lowest component
    label) and fully enclosed holes are filled per axial slice.

    Raises:
        NoBodyFoundError: when no voxel exceeds the threshold.
    """
    cand = v.data > threshold
    if not cand.any():
        raise NoBodyFoundError(
            f"no body found: no voxel above threshold {threshold}"
        )
    labeled, n = ndimage.label(cand, structure=_CONN26)
    if n > 1:
        sizes = np.bincount(labeled.ravel())
        sizes[0] = 0
        keep = int(sizes.argmax())
        mask = labeled == keep
    else:
        mask = cand.copy()
    for z in range(mask.shape[0]):
        mask[z] = ndimage.binary_fill_holes(mask[z])
    return BodyMask(mask, threshold=float(threshold))
