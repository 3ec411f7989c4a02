"""Similarity and regularity terms for deformable registration.

All terms are evaluated over a body mask and reduced in float64:

  * windowed normalized cross-correlation, reported as the mean squared
    local correlation (a similarity in [0, 1]; the optimizer minimizes
    1 - value);
  * embedding similarity loss, 1 - mean cosine between fixed and warped
    descriptor vectors (in [0, 2]);
  * smoothness, the mean squared forward-difference gradient of the field.

The *_value_and_grad variants also return analytic derivatives and are
the exact code paths the optimizer differentiates, which is what
gradient_check validates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .embedding import EmbeddingVolume, is_unit_normalized
from .volume import BodyMask, Volume, _freeze

NCC_EPS = 1e-5


def _mask_data(mask: BodyMask) -> np.ndarray:
    m = mask.data
    if not m.any():
        raise ValueError("mask is empty")
    return m


# ---------------------------------------------------------------------------
# Local normalized cross-correlation


def _ncc_terms(f: np.ndarray, m: np.ndarray, radius: int, eps: float):
    count = ops.box_count(f.shape, radius)
    s1 = ops.box_sum(f, radius)
    s2 = ops.box_sum(m, radius)
    s11 = ops.box_sum(f * f, radius)
    s22 = ops.box_sum(m * m, radius)
    s12 = ops.box_sum(f * m, radius)
    num = s12 - s1 * s2 / count
    varf = np.maximum(s11 - s1 * s1 / count, 0.0)
    varm = np.maximum(s22 - s2 * s2 / count, 0.0)
    denom = np.sqrt(varf * varm + eps)
    cc = num / denom
    return cc, denom, varf, s1 / count, s2 / count


def local_ncc_loss(f: Volume, m: Volume, mask: BodyMask, window: int = 4) -> float:
    """Mean squared local correlation over the mask, in [0, 1].

    CC(u) uses the (2*window+1)^3 neighborhood truncated at volume
    borders; zero-variance windows contribute 0. The minimized term is
    1 - returned value.
    """
    if f.dims != m.dims:
        raise ValueError(f"local_ncc_loss: dims {f.dims} != {m.dims}")
    if f.dims != mask.dims:
        raise ValueError(f"local_ncc_loss: dims {f.dims} != mask {mask.dims}")
    if window < 1:
        raise ValueError(f"window radius must be >= 1, got {window}")
    value, _ = ncc_value_and_grad(
        f.data.astype(np.float64), m.data.astype(np.float64),
        _mask_data(mask), window, need_grad=False,
    )
    return value


def ncc_value_and_grad(f: np.ndarray, m: np.ndarray, mask: np.ndarray,
                       radius: int, eps: float = NCC_EPS, need_grad: bool = True):
    """Similarity mean(CC^2) over mask and its gradient w.r.t. the moving image.

    The gradient uses the box-filter adjoint: with a(u) = 2 CC/denom and
    b(u) = 2 CC^2 varf / denom^2 restricted to the mask,

        d sim / dm(v) = [ f(v) B(a)(v) - B(a fbar)(v)
                          - m(v) B(b)(v) + B(b mbar)(v) ] / |mask|

    where B is the same truncated box sum and fbar/mbar are window means.
    """
    f = np.asarray(f, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    cc, denom, varf, fbar, mbar = _ncc_terms(f, m, radius, eps)
    nmask = float(mask.sum())
    value = float((cc[mask] ** 2).sum() / nmask)
    if not need_grad:
        return value, None
    mm = mask.astype(np.float64)
    alpha = 2.0 * cc / denom * mm
    beta = 2.0 * cc * cc * varf / (denom * denom) * mm
    grad = (
        f * ops.box_sum(alpha, radius)
        - ops.box_sum(alpha * fbar, radius)
        - m * ops.box_sum(beta, radius)
        + ops.box_sum(beta * mbar, radius)
    ) / nmask
    return value, grad


# ---------------------------------------------------------------------------
# Embedding similarity


def embedding_loss(fixed: EmbeddingVolume, moving_warped: EmbeddingVolume, mask: BodyMask) -> float:
    """1 - mean cosine similarity between paired voxel descriptors over the mask."""
    if fixed.dims != moving_warped.dims:
        raise ValueError(f"embedding_loss: dims {fixed.dims} != {moving_warped.dims}")
    if fixed.dims != mask.dims:
        raise ValueError(f"embedding_loss: dims {fixed.dims} != mask {mask.dims}")
    for name, emb in (("fixed", fixed), ("moving", moving_warped)):
        if not emb.normalized and not is_unit_normalized(emb):
            raise ValueError(f"embedding_loss: {name} embedding is not unit-normalized")
    cos = (fixed.data.astype(np.float64) * moving_warped.data.astype(np.float64)).sum(axis=0)
    return float(1.0 - cos[_mask_data(mask)].mean())


# ---------------------------------------------------------------------------
# Smoothness


def _forward_diff(arr: np.ndarray, axis: int) -> np.ndarray:
    """tau(i+1) - tau(i); the upper border repeats the last interior difference."""
    if arr.shape[axis] < 2:
        return np.zeros_like(arr)
    d = np.diff(arr, axis=axis)
    last = np.take(d, [-1], axis=axis)
    return np.concatenate([d, last], axis=axis)


def smoothness_loss(field, mask: BodyMask) -> float:
    """Mean over the mask of the squared forward-difference field gradient.

    Accepts a DisplacementField or a raw (3, D, H, W) array.
    """
    data = np.asarray(getattr(field, "data", field), dtype=np.float64)
    if data.shape[1:] != mask.dims:
        raise ValueError(f"smoothness_loss: field dims {data.shape[1:]} != mask {mask.dims}")
    value, _ = smoothness_value_and_grad(data, _mask_data(mask), need_grad=False)
    return value


def smoothness_value_and_grad(tau: np.ndarray, mask: np.ndarray, need_grad: bool = True):
    """Loss and its adjoint-derived gradient w.r.t. the field."""
    tau = np.asarray(tau, dtype=np.float64)
    nmask = float(mask.sum())
    diffs = [_forward_diff(tau, axis) for axis in (1, 2, 3)]
    total = 0.0
    for g in diffs:
        total += (g[:, mask] ** 2).sum()
    value = float(total / nmask)
    if not need_grad:
        return value, None

    grad = np.zeros_like(tau)
    scale = 2.0 * mask.astype(np.float64) / nmask
    for axis, g in zip((1, 2, 3), diffs):
        w = scale[None] * g
        n = tau.shape[axis]
        sl = [slice(None)] * 4

        def take(a, s):
            sl_ = list(sl)
            sl_[axis] = s
            return a[tuple(sl_)]

        if n >= 2:
            # interior terms: g(i) = tau(i+1) - tau(i) for i < n-1
            take(grad, slice(1, n))[...] += take(w, slice(0, n - 1))
            take(grad, slice(0, n - 1))[...] -= take(w, slice(0, n - 1))
            # border term g(n-1) = tau(n-1) - tau(n-2)
            take(grad, slice(n - 1, n))[...] += take(w, slice(n - 1, n))
            take(grad, slice(n - 2, n - 1))[...] -= take(w, slice(n - 1, n))
    return value, grad


# ---------------------------------------------------------------------------
# Correlation feature

CORRELATION_CHANNELS = 27
CENTER_CHANNEL = 13  # offset (0, 0, 0) in (z, y, x)-lexicographic order


@dataclass(frozen=True)
class CorrelationFeature:
    """27-channel map of embedding inner products over offsets {-r, 0, r}^3.

    Channel 9*iz + 3*iy + ix holds the similarity at displacement
    (dz, dy, dx) with each component in (-r, 0, r); channel 13 is the
    pointwise fixed/moving similarity.
    """

    data: np.ndarray
    radius: int = 2

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[0] != CORRELATION_CHANNELS:
            raise ValueError(f"correlation feature must be (27, D, H, W), got {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def channels(self) -> int:
        return CORRELATION_CHANNELS

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


def correlation_offsets(radius: int = 2):
    """The 27 displacements in channel order."""
    steps = (-radius, 0, radius)
    return [(dz, dy, dx) for dz in steps for dy in steps for dx in steps]


def correlation_feature(fixed: EmbeddingVolume, moving: EmbeddingVolume, radius: int = 2) -> CorrelationFeature:
    """Inner products <fixed(u), moving(u + d)> for the 27 offsets, border-clamped."""
    if fixed.dims != moving.dims:
        raise ValueError(f"correlation_feature: dims {fixed.dims} != {moving.dims}")
    D, H, W = fixed.dims
    fd = fixed.data.astype(np.float64)
    md = moving.data.astype(np.float64)
    out = np.empty((CORRELATION_CHANNELS, D, H, W), dtype=np.float32)
    for ch, (dz, dy, dx) in enumerate(correlation_offsets(radius)):
        iz = np.clip(np.arange(D) + dz, 0, D - 1)
        iy = np.clip(np.arange(H) + dy, 0, H - 1)
        ix = np.clip(np.arange(W) + dx, 0, W - 1)
        shifted = md[:, iz][:, :, iy][:, :, :, ix]
        out[ch] = (fd * shifted).sum(axis=0).astype(np.float32)
    return CorrelationFeature(out, radius=radius)
