"""Input coercion and validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .embedding import EmbeddingVolume, is_unit_normalized, normalize_embedding
from .metrics import LabelVolume
from .volume import Volume


def ensure_volume(x) -> Volume:
    """Accept a Volume or a (D, H, W) array (unit spacing assumed)."""
    if isinstance(x, Volume):
        return x
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"expected a Volume or 3D array, got shape {arr.shape}")
    return Volume(arr.astype(np.float32))


def ensure_embedding(x) -> EmbeddingVolume:
    """Accept an EmbeddingVolume or (C, D, H, W) array; normalize if needed."""
    if isinstance(x, EmbeddingVolume):
        emb = x
    else:
        arr = np.asarray(x)
        if arr.ndim != 4:
            raise ValueError(f"expected an EmbeddingVolume or 4D array, got shape {arr.shape}")
        emb = EmbeddingVolume(arr.astype(np.float32))
    if emb.normalized or is_unit_normalized(emb):
        return emb if emb.normalized else EmbeddingVolume(emb.data, normalized=True)
    return normalize_embedding(emb)


def ensure_labels(x) -> LabelVolume:
    if isinstance(x, LabelVolume):
        return x
    return LabelVolume(np.asarray(x))


def check_same_grid(a, b, what: str = "inputs"):
    if tuple(a.dims) != tuple(b.dims):
        raise ValueError(f"{what}: dims {tuple(a.dims)} != {tuple(b.dims)}")
