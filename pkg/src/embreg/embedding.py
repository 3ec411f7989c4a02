"""Per-voxel descriptor volumes: normalization, synthesis, file I/O.

An embedding volume stores a C-vector per voxel, channel-major. Matching
and the embedding similarity loss assume unit-normalized vectors so inner
products are cosine similarities; :func:`normalize_embedding` enforces
that on ingest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import io, ops
from .volume import Volume, _freeze

_NORM_TOL = 1e-4


@dataclass(frozen=True)
class EmbeddingVolume:
    """C-channel per-voxel descriptor field.

    Attributes:
        data: (C, D, H, W) float32, channel-major.
        normalized: True when every voxel vector has unit L2 norm.
        zero_count: voxels whose vector was zero before normalization and
            was replaced by the first basis vector.
    """

    data: np.ndarray
    normalized: bool = False
    zero_count: int = field(default=0, compare=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"embedding data must be (C, D, H, W), got {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def vector_at(self, z: int, y: int, x: int) -> np.ndarray:
        return self.data[:, z, y, x]


def normalize_embedding(e: EmbeddingVolume) -> EmbeddingVolume:
    """L2-normalize every voxel vector along the channel axis.

    Zero vectors are replaced by the first basis vector and counted in
    ``zero_count``. Idempotent on already-unit input.
    """
    data = e.data.astype(np.float64)
    norms = np.sqrt((data * data).sum(axis=0))
    zero = norms < 1e-12
    zero_count = int(zero.sum())
    safe = np.where(zero, 1.0, norms)
    out = data / safe
    if zero_count:
        out[:, zero] = 0.0
        out[0, zero] = 1.0
    return EmbeddingVolume(out.astype(np.float32), normalized=True, zero_count=zero_count)


def is_unit_normalized(e: EmbeddingVolume, tol: float = _NORM_TOL) -> bool:
    norms = np.sqrt((e.data.astype(np.float64) ** 2).sum(axis=0))
    return bool(np.all(np.abs(norms - 1.0) <= tol))


# base channel layout of the synthetic descriptor, before padding to C
_SYNTH_BASE_CHANNELS = 15


def synth_descriptors(v: Volume, channels: int = 16) -> EmbeddingVolume:
    """Deterministic multi-scale descriptor per voxel (stand-in for a learned one).

    Channels, in order: local mean and variance at radii 1, 2 and 4;
    central-difference gradients (z, y, x) at steps 1 and 2; absolute
    voxel coordinates scaled to [0, 1]. Padded with zeros or truncated to
    ``channels``, then unit-normalized. Identical inputs give bitwise
    identical outputs.
    """
    if channels < 8:
        raise ValueError(f"synthetic descriptors need at least 8 channels, got {channels}")
    data = v.data.astype(np.float64)
    D, H, W = data.shape
    feats = []
    for radius in (1, 2, 4):
        count = ops.box_count(data.shape, radius)
        s1 = ops.box_sum(data, radius)
        s2 = ops.box_sum(data * data, radius)
        mean = s1 / count
        var = np.maximum(s2 / count - mean * mean, 0.0)
        feats.append(mean)
        feats.append(var)
    for step in (1, 2):
        for axis in range(3):
            feats.append(ops.clamped_central_diff(data, axis, step))
    grid = np.indices((D, H, W), dtype=np.float64)
    for axis, n in enumerate((D, H, W)):
        feats.append(grid[axis] / (n - 1) if n > 1 else np.zeros_like(data))

    stack = np.stack(feats[:channels], axis=0)
    if channels > _SYNTH_BASE_CHANNELS:
        pad = np.zeros((channels - _SYNTH_BASE_CHANNELS, D, H, W))
        stack = np.concatenate([stack, pad], axis=0)
    return normalize_embedding(EmbeddingVolume(stack.astype(np.float32)))


def load_embedding(path: str) -> EmbeddingVolume:
    """Load an embedding from an .evol container (returned unnormalized)."""
    data, _, _ = io.load_evol(path)
    return EmbeddingVolume(data)


def save_embedding(e: EmbeddingVolume, path: str, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> None:
    io.save_evol(path, e.data, spacing, origin)
