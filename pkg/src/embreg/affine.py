"""Least-squares affine estimation from point matches, and affine warping.

The transform maps moving-space voxel coordinates toward fixed space:
A @ (z, y, x, 1). Warping therefore pulls back: the output at fixed voxel
u samples the moving image at A^-1 @ u. Getting this direction wrong is
the classic registration bug, so it is pinned by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import interp
from .embedding import EmbeddingVolume, normalize_embedding
from .errors import DegenerateConfigurationError, InsufficientCorrespondencesError
from .matching import MatchSet
from .volume import Volume, _freeze

_LAST_ROW = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class AffineTransform:
    """4x4 homogeneous matrix on (z, y, x, 1) coordinates, last row (0,0,0,1)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"affine matrix must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], _LAST_ROW):
            raise ValueError(f"last row must be (0, 0, 0, 1), got {m[3]}")
        object.__setattr__(self, "matrix", _freeze(m))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def is_invertible(self, tol: float = 1e-8) -> bool:
        return abs(np.linalg.det(self.linear)) > tol

    def inverse(self) -> "AffineTransform":
        if not self.is_invertible():
            raise np.linalg.LinAlgError("affine transform is singular")
        inv = np.eye(4)
        inv[:3, :3] = np.linalg.inv(self.linear)
        inv[:3, 3] = -inv[:3, :3] @ self.translation
        return AffineTransform(inv)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        """Map (k, 3) coordinates through the transform."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.translation


def fit_affine(matches: MatchSet) -> tuple[AffineTransform, float]:
    """Least-squares affine mapping moving points onto fixed points.

    Solves min_A ||A @ Pm_h - Pf||_F^2 over matrices with last row
    (0, 0, 0, 1) via an orthogonal (SVD-based) least-squares solve.

    Returns:
        (transform, residual_rms) where residual_rms is the root mean
        square Euclidean residual in voxels.

    Raises:
        InsufficientCorrespondencesError: fewer than 4 matches.
        DegenerateConfigurationError: fixed or moving points are coplanar.
    """
    k = matches.k
    if k < 4:
        raise InsufficientCorrespondencesError(
            f"insufficient correspondences: need at least 4, got {k}"
        )
    for name, pts in (("fixed", matches.fixed_points), ("moving", matches.moving_points)):
        centered = pts - pts.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[2] <= 1e-8 * max(1.0, s[0]):
            raise DegenerateConfigurationError(
                f"degenerate configuration: {name} points are coplanar "
                f"(singular values {s})"
            )

    design = np.hstack([matches.moving_points, np.ones((k, 1))])
    sol, _, _, _ = np.linalg.lstsq(design, matches.fixed_points, rcond=None)
    matrix = np.eye(4)
    matrix[:3, :] = sol.T
    transform = AffineTransform(matrix)

    residual = transform.apply_points(matches.moving_points) - matches.fixed_points
    rms = float(np.sqrt((residual**2).sum(axis=1).mean()))
    return transform, rms


def _pullback_coords(a: AffineTransform, out_dims) -> np.ndarray:
    inv = a.inverse()
    grid = interp.voxel_grid(out_dims)
    return inv.linear @ grid + inv.translation[:, None]


def apply_affine(v: Volume, a: AffineTransform, out_dims=None) -> Volume:
    """Warp a volume: output(u) = input(A^-1 @ u), trilinear, border-clamped.

    out_dims defaults to the input dims; pass the fixed grid's dims to
    resample a moving image onto a differently sized fixed grid.
    """
    out_dims = tuple(out_dims) if out_dims is not None else v.dims
    src = _pullback_coords(a, out_dims)
    vals = interp.trilinear(v.data, src)
    return Volume(vals.reshape(out_dims).astype(np.float32), v.spacing, v.origin)


def apply_affine_embedding(e: EmbeddingVolume, a: AffineTransform, out_dims=None) -> EmbeddingVolume:
    """Warp an embedding channel-wise, then re-normalize the voxel vectors."""
    out_dims = tuple(out_dims) if out_dims is not None else e.dims
    src = _pullback_coords(a, out_dims)
    vals = interp.trilinear(e.data, src)
    warped = EmbeddingVolume(vals.reshape((e.channels,) + out_dims).astype(np.float32))
    return normalize_embedding(warped)


def save_affine(a: AffineTransform, path: str) -> None:
    """Write the matrix as 16 whitespace-separated decimals, row-major."""
    with open(path, "w", encoding="ascii") as fh:
        for row in a.matrix:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_affine(path: str) -> AffineTransform:
    values = [float(t) for t in open(path, "r", encoding="ascii").read().split()]
    if len(values) != 16:
        raise ValueError(f"affine file {path} must hold 16 numbers, found {len(values)}")
    return AffineTransform(np.array(values).reshape(4, 4))
