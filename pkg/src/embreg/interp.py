"""Trilinear and nearest-neighbor sampling on 3D grids.

All samplers take fractional voxel coordinates as a (3, N) array in
(z, y, x) order and clamp out-of-bounds coordinates to the border voxel.
Arithmetic is float64; callers cast results as needed.
"""

from __future__ import annotations

import numpy as np


def _axis_cells(coords_ax: np.ndarray, n: int):
    """Lower cell index, upper cell index and fraction for one axis."""
    c = np.clip(coords_ax, 0.0, float(n - 1))
    i0 = np.floor(c).astype(np.intp)
    np.clip(i0, 0, max(n - 2, 0), out=i0)
    i1 = np.minimum(i0 + 1, n - 1)
    t = c - i0
    return i0, i1, t


def _flatten(data: np.ndarray):
    """View data as (C, D*H*W) float64 plus its grid dims."""
    if data.ndim == 4:
        dims = data.shape[1:]
        flat = data.reshape(data.shape[0], -1)
    elif data.ndim == 3:
        dims = data.shape
        flat = data.reshape(1, -1)
    else:
        raise ValueError(f"expected 3D or 4D array, got shape {data.shape}")
    return flat.astype(np.float64, copy=False), dims


def trilinear(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Border-clamped trilinear sampling.

    Args:
        data: (D, H, W) scalar grid or (C, D, H, W) multi-channel grid.
        coords: (3, N) fractional voxel coordinates, (z, y, x).

    Returns:
        (N,) or (C, N) float64 samples.
    """
    flat, (D, H, W) = _flatten(data)
    coords = np.asarray(coords, dtype=np.float64)
    z0, z1, tz = _axis_cells(coords[0], D)
    y0, y1, ty = _axis_cells(coords[1], H)
    x0, x1, tx = _axis_cells(coords[2], W)

    out = np.zeros((flat.shape[0], coords.shape[1]), dtype=np.float64)
    for zi, wz in ((z0, 1.0 - tz), (z1, tz)):
        zoff = zi * H
        for yi, wy in ((y0, 1.0 - ty), (y1, ty)):
            row = (zoff + yi) * W
            for xi, wx in ((x0, 1.0 - tx), (x1, tx)):
                out += (wz * wy * wx) * flat[:, row + xi]
    return out if data.ndim == 4 else out[0]


def trilinear_with_coord_grad(data: np.ndarray, coords: np.ndarray):
    """Trilinear samples plus derivatives with respect to each coordinate.

    Derivatives are zero where the (unclamped) coordinate lies strictly
    outside the grid; inside a cell they are the exact piecewise-linear
    derivatives of the interpolant.

    Returns:
        (values, dz, dy, dx), each (N,) or (C, N) float64.
    """
    flat, (D, H, W) = _flatten(data)
    coords = np.asarray(coords, dtype=np.float64)
    z0, z1, tz = _axis_cells(coords[0], D)
    y0, y1, ty = _axis_cells(coords[1], H)
    x0, x1, tx = _axis_cells(coords[2], W)

    shape = (flat.shape[0], coords.shape[1])
    val = np.zeros(shape, dtype=np.float64)
    gz = np.zeros(shape, dtype=np.float64)
    gy = np.zeros(shape, dtype=np.float64)
    gx = np.zeros(shape, dtype=np.float64)
    for zi, wz, sz in ((z0, 1.0 - tz, -1.0), (z1, tz, 1.0)):
        zoff = zi * H
        for yi, wy, sy in ((y0, 1.0 - ty, -1.0), (y1, ty, 1.0)):
            row = (zoff + yi) * W
            for xi, wx, sx in ((x0, 1.0 - tx, -1.0), (x1, tx, 1.0)):
                corner = flat[:, row + xi]
                val += (wz * wy * wx) * corner
                gz += (sz * wy * wx) * corner
                gy += (wz * sy * wx) * corner
                gx += (wz * wy * sx) * corner

    # Clamped samples are constant outside the grid.
    gz *= (coords[0] >= 0.0) & (coords[0] <= D - 1)
    gy *= (coords[1] >= 0.0) & (coords[1] <= H - 1)
    gx *= (coords[2] >= 0.0) & (coords[2] <= W - 1)
    if data.ndim == 3:
        return val[0], gz[0], gy[0], gx[0]
    return val, gz, gy, gx


def nearest(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Border-clamped nearest-neighbor sampling (round-half-up).

    data: (D, H, W); coords: (3, N). Preserves the input dtype.
    """
    if data.ndim != 3:
        raise ValueError(f"expected 3D array, got shape {data.shape}")
    D, H, W = data.shape
    coords = np.asarray(coords, dtype=np.float64)
    iz = np.clip(np.floor(coords[0] + 0.5), 0, D - 1).astype(np.intp)
    iy = np.clip(np.floor(coords[1] + 0.5), 0, H - 1).astype(np.intp)
    ix = np.clip(np.floor(coords[2] + 0.5), 0, W - 1).astype(np.intp)
    return data.reshape(-1)[(iz * H + iy) * W + ix]


def voxel_grid(dims) -> np.ndarray:
    """Flattened (3, D*H*W) float64 grid of voxel coordinates, z-major."""
    D, H, W = dims
    grid = np.indices((D, H, W), dtype=np.float64)
    return grid.reshape(3, -1)
