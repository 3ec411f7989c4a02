"""Dense displacement fields: construction from sparse matches, warping, composition.

Convention: a field tau stores per-voxel displacements (dz, dy, dx) in
voxel units on the fixed grid, and warping samples the moving data at
u + tau(u). A matched pair (pf, pm) therefore stores pm - pf at its grid
node, so the warp lands on the matched moving point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import interp, io
from .affine import AffineTransform
from .embedding import EmbeddingVolume, normalize_embedding
from .matching import MatchSet
from .volume import Volume, _freeze


@dataclass(frozen=True)
class DisplacementField:
    """(3, D, H, W) float32 displacement field in voxel units, finite everywhere."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise ValueError(f"field data must be (3, D, H, W), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("displacement field contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @classmethod
    def zero(cls, dims) -> "DisplacementField":
        return cls(np.zeros((3,) + tuple(dims), dtype=np.float32))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


def _check_dims(a_dims, b_dims, what: str):
    if tuple(a_dims) != tuple(b_dims):
        raise ValueError(f"{what}: dims {tuple(a_dims)} != {tuple(b_dims)}")


def build_coarse_field(matches: MatchSet, dims, grid_stride: int) -> DisplacementField:
    """Densify sparse grid-point displacements into a full field.

    Surviving grid nodes hold moving - fixed; missing nodes (filtered or
    outside the mask) copy their nearest surviving node; the dense field
    interpolates trilinearly between nodes and clamps beyond the outermost
    node layer. Interpolation is exact at the nodes.
    """
    if matches.k < 1:
        raise ValueError("need at least one match to build a coarse field")
    dims = tuple(int(n) for n in dims)
    node_counts = tuple(len(range(0, n, grid_stride)) for n in dims)
    values = np.zeros((3,) + node_counts, dtype=np.float64)
    have = np.zeros(node_counts, dtype=bool)

    disp = matches.moving_points - matches.fixed_points
    for i in range(matches.k):
        pf = matches.fixed_points[i]
        node = pf / grid_stride
        idx = np.rint(node).astype(int)
        if not np.allclose(pf, idx * grid_stride) or np.any(pf >= dims) or np.any(pf < 0):
            raise ValueError(
                f"fixed point {tuple(pf)} is not on the stride-{grid_stride} grid of {dims}"
            )
        values[:, idx[0], idx[1], idx[2]] = disp[i]
        have[idx[0], idx[1], idx[2]] = True

    if not have.all():
        # Nearest surviving node on the node lattice fills the gaps.
        _, nearest_idx = ndimage.distance_transform_edt(~have, return_indices=True)
        filled = values[:, nearest_idx[0], nearest_idx[1], nearest_idx[2]]
        values = np.where(have[None], values, filled)

    grid = interp.voxel_grid(dims) / float(grid_stride)
    dense = interp.trilinear(values, grid)
    return DisplacementField(dense.reshape((3,) + dims).astype(np.float32))


def _warp_coords(field: DisplacementField) -> np.ndarray:
    coords = interp.voxel_grid(field.dims)
    coords += field.data.reshape(3, -1).astype(np.float64)
    return coords


def warp_by_field(v: Volume, field: DisplacementField) -> Volume:
    """output(u) = input(u + tau(u)), trilinear, border-clamped."""
    _check_dims(v.dims, field.dims, "warp_by_field")
    vals = interp.trilinear(v.data, _warp_coords(field))
    return Volume(vals.reshape(field.dims).astype(np.float32), v.spacing, v.origin)


def warp_embedding_by_field(e: EmbeddingVolume, field: DisplacementField) -> EmbeddingVolume:
    """Channel-wise trilinear warp followed by per-voxel re-normalization."""
    _check_dims(e.dims, field.dims, "warp_embedding_by_field")
    vals = interp.trilinear(e.data, _warp_coords(field))
    warped = EmbeddingVolume(vals.reshape((e.channels,) + field.dims).astype(np.float32))
    return normalize_embedding(warped)


def warp_labels_by_field(labels: np.ndarray, field: DisplacementField) -> np.ndarray:
    """Nearest-neighbor warp for integer label maps."""
    _check_dims(labels.shape, field.dims, "warp_labels_by_field")
    out = interp.nearest(np.ascontiguousarray(labels), _warp_coords(field))
    return out.reshape(field.dims)


def compose_fields(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Field equivalent to warping by `outer` first, then by `inner`.

    result(u) = inner(u) + outer(u + inner(u)), sampling `outer` trilinearly,
    so warp(v, result) ~= warp(warp(v, outer), inner).
    """
    _check_dims(outer.dims, inner.dims, "compose_fields")
    coords = _warp_coords(inner)
    sampled = interp.trilinear(outer.data, coords)
    total = inner.data.astype(np.float64).reshape(3, -1) + sampled
    return DisplacementField(total.reshape((3,) + inner.dims).astype(np.float32))


def field_from_affine(a: AffineTransform, dims) -> DisplacementField:
    """The displacement field whose warp equals apply_affine on this grid."""
    dims = tuple(int(n) for n in dims)
    inv = a.inverse()
    grid = interp.voxel_grid(dims)
    src = inv.linear @ grid + inv.translation[:, None]
    return DisplacementField((src - grid).reshape((3,) + dims).astype(np.float32))


def save_field(field: DisplacementField, path: str) -> None:
    io.save_evol(path, field.data)


def load_field(path: str) -> DisplacementField:
    data, _, _ = io.load_evol(path)
    if data.shape[0] != 3:
        raise io.VolumeIOError(f"displacement field must have C=3 in {path}")
    return DisplacementField(data)
