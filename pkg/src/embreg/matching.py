"""Grid-based point matching between embedding volumes.

A query vector is matched by exhaustive inner-product search over a
stride-decimated target, then refined by a full-resolution search in the
(2*stride+1)^3 neighborhood of the coarse winner. Ties break to the
smallest z-major linear index, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingVolume
from .errors import NoConfidentMatchesError
from .volume import BodyMask, _freeze


@dataclass(frozen=True)
class MatchSet:
    """Matched fixed/moving voxel coordinates with similarity scores.

    fixed_points / moving_points are (k, 3) in (z, y, x) voxel units;
    similarities are cosine scores in [-1, 1], each at least the threshold
    used to build the set.
    """

    fixed_points: np.ndarray
    moving_points: np.ndarray
    similarities: np.ndarray
    threshold: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        fp = np.ascontiguousarray(self.fixed_points, dtype=np.float64)
        mp = np.ascontiguousarray(self.moving_points, dtype=np.float64)
        sim = np.ascontiguousarray(self.similarities, dtype=np.float64)
        if fp.ndim != 2 or fp.shape[1] != 3:
            raise ValueError(f"fixed_points must be (k, 3), got {fp.shape}")
        if mp.shape != fp.shape:
            raise ValueError(f"moving_points shape {mp.shape} != fixed {fp.shape}")
        if sim.shape != (fp.shape[0],):
            raise ValueError(f"similarities must be (k,), got {sim.shape}")
        object.__setattr__(self, "fixed_points", _freeze(fp))
        object.__setattr__(self, "moving_points", _freeze(mp))
        object.__setattr__(self, "similarities", _freeze(sim))

    @property
    def k(self) -> int:
        return self.fixed_points.shape[0]


def _argmax_first(sims: np.ndarray) -> tuple[int, ...]:
    """Argmax with first-occurrence (smallest z-major index) tie-break."""
    flat = int(np.argmax(sims))
    return np.unravel_index(flat, sims.shape)


def _refine(query: np.ndarray, data: np.ndarray, coarse, radius: int):
    """Exhaustive search in the clipped cube of the given radius around coarse."""
    dims = data.shape[1:]
    lo = [max(0, c - radius) for c in coarse]
    hi = [min(n, c + radius + 1) for c, n in zip(coarse, dims)]
    block = data[:, lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    sims = np.tensordot(query, block.astype(np.float64, copy=False), axes=([0], [0]))
    iz, iy, ix = _argmax_first(sims)
    coord = (lo[0] + int(iz), lo[1] + int(iy), lo[2] + int(ix))
    return coord, float(sims[iz, iy, ix])


def match_point(query: np.ndarray, target: EmbeddingVolume, stride: int = 1):
    """Find the target voxel whose descriptor best matches the query.

    Args:
        query: (C,) unit-normalized descriptor.
        target: normalized embedding volume to search.
        stride: decimation stride for the coarse pass; 1 is exhaustive.

    Returns:
        ((z, y, x), similarity) at full resolution.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    dims = target.dims
    if stride > max(dims):
        raise ValueError(f"stride {stride} exceeds every target dimension {dims}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (target.channels,):
        raise ValueError(f"query must be ({target.channels},), got {query.shape}")

    dec = target.data[:, ::stride, ::stride, ::stride]
    sims = np.tensordot(query, dec.astype(np.float64, copy=False), axes=([0], [0]))
    iz, iy, ix = _argmax_first(sims)
    coarse = (int(iz) * stride, int(iy) * stride, int(ix) * stride)
    if stride == 1:
        return coarse, float(sims[iz, iy, ix])
    return _refine(query, target.data, coarse, stride)


def _grid_coords(dims, stride: int) -> np.ndarray:
    axes = [np.arange(0, n, stride) for n in dims]
    zz, yy, xx = np.meshgrid(*axes, indexing="ij")
    return np.stack([zz.ravel(), yy.ravel(), xx.ravel()], axis=1)


def grid_match(
    fixed: EmbeddingVolume,
    moving: EmbeddingVolume,
    mask: BodyMask,
    grid_stride: int = 8,
    threshold: float = 0.7,
    search_stride: int = 4,
) -> MatchSet:
    """Match every in-mask fixed grid point into the moving embedding.

    The fixed grid takes every grid_stride-th voxel per axis; points
    outside the mask are dropped, each survivor is matched with
    :func:`match_point`, and pairs scoring below the threshold are
    discarded. Traversal (and output) order is z-major.

    Raises:
        NoConfidentMatchesError: when no pair reaches the threshold; the
            exception carries the pre-filter candidate count.
    """
    if fixed.dims != mask.dims:
        raise ValueError(f"fixed embedding dims {fixed.dims} != mask dims {mask.dims}")
    if fixed.channels != moving.channels:
        raise ValueError(
            f"channel mismatch: fixed C={fixed.channels}, moving C={moving.channels}"
        )
    if grid_stride < 1:
        raise ValueError(f"grid_stride must be >= 1, got {grid_stride}")

    grid = _grid_coords(fixed.dims, grid_stride)
    inside = mask.data[grid[:, 0], grid[:, 1], grid[:, 2]]
    grid = grid[inside]

    # Hoist the decimated copy out of the per-point loop.
    dec = np.ascontiguousarray(
        moving.data[:, ::search_stride, ::search_stride, ::search_stride],
        dtype=np.float64,
    )
    dec2 = dec.reshape(dec.shape[0], -1)
    dec_shape = dec.shape[1:]
    if search_stride > max(moving.dims):
        raise ValueError(
            f"stride {search_stride} exceeds every target dimension {moving.dims}"
        )

    fixed_pts, moving_pts, sims = [], [], []
    for z, y, x in grid:
        query = fixed.data[:, z, y, x].astype(np.float64)
        flat = query @ dec2
        iz, iy, ix = _argmax_first(flat.reshape(dec_shape))
        coarse = (int(iz) * search_stride, int(iy) * search_stride, int(ix) * search_stride)
        if search_stride == 1:
            coord, sim = coarse, float(flat.reshape(dec_shape)[iz, iy, ix])
        else:
            coord, sim = _refine(query, moving.data, coarse, search_stride)
        if sim >= threshold:
            fixed_pts.append((int(z), int(y), int(x)))
            moving_pts.append(coord)
            sims.append(sim)

    if not fixed_pts:
        raise NoConfidentMatchesError(
            f"no confident correspondences: all {len(grid)} grid points scored "
            f"below threshold {threshold}",
            prefilter_count=len(grid),
        )
    return MatchSet(
        np.array(fixed_pts, dtype=np.float64),
        np.array(moving_pts, dtype=np.float64),
        np.array(sims, dtype=np.float64),
        threshold=threshold,
    )
