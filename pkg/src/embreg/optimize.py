"""Multi-resolution gradient-descent optimization of a dense displacement field.

Minimizes, over the field tau,

    (1 - mean local CC^2) + lambda * embedding_loss + gamma * smoothness_loss

with momentum gradient descent on an image pyramid (coarsest level first;
the field is upsampled x2 and scaled x2 between levels). Gradients of all
three terms are analytic, chained through the trilinear interpolation
weights of the warp; gradient_check compares them against central finite
differences on the same code path.

The best-so-far field at each level is retained, so a divergent step can
never degrade the returned result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import interp, losses, ops
from .embedding import EmbeddingVolume
from .fields import DisplacementField
from .volume import BodyMask, Volume

logger = logging.getLogger(__name__)


@dataclass
class OptParams:
    """Knobs for optimize_field; per-level sequences run coarsest to finest."""

    levels: int = 3
    max_iter: tuple = (100, 50, 24)
    momentum: float = 0.9
    lambda_embedding: float = 1.0
    gamma_smooth: float = 0.5
    ncc_radius: tuple | int | None = None  # None: 2 at coarsest up to 4 at finest
    tol: float = 1e-4
    patience: int = 10
    max_step_voxels: float = 0.5
    init_from_correlation: bool = False

    def iters_for(self, n_levels: int) -> list[int]:
        if isinstance(self.max_iter, int):
            return [self.max_iter] * n_levels
        iters = list(self.max_iter)
        if len(iters) < n_levels:
            iters = iters + [iters[-1]] * (n_levels - len(iters))
        return iters[:n_levels]

    def radii_for(self, n_levels: int) -> list[int]:
        if self.ncc_radius is None:
            if n_levels == 1:
                return [4]
            return [int(round(2 + 2 * i / (n_levels - 1))) for i in range(n_levels)]
        if isinstance(self.ncc_radius, int):
            return [self.ncc_radius] * n_levels
        radii = list(self.ncc_radius)
        if len(radii) < n_levels:
            radii = radii + [radii[-1]] * (n_levels - len(radii))
        return radii[:n_levels]


@dataclass(frozen=True)
class LossReport:
    """One loss evaluation: ncc is the minimized term (1 - mean CC^2)."""

    ncc: float
    embedding: float
    smooth: float
    total: float
    iteration: int
    level: int


# ---------------------------------------------------------------------------
# Differentiable terms (raw-array code paths shared with gradient_check)


def _ncc_term(fixed_data, moving_data, mask, radius, tau, base_grid):
    """(1 - similarity, d/dtau) for the warped-moving NCC term."""
    dims = fixed_data.shape
    coords = base_grid + tau.reshape(3, -1)
    warped, gz, gy, gx = interp.trilinear_with_coord_grad(moving_data, coords)
    sim, gw = losses.ncc_value_and_grad(fixed_data, warped.reshape(dims), mask, radius)
    gwf = gw.reshape(-1)
    grad = np.stack([-gwf * gz, -gwf * gy, -gwf * gx]).reshape((3,) + dims)
    return 1.0 - sim, grad, warped.reshape(dims)


def _embedding_term(fixed_emb_data, moving_emb_data, mask, tau, base_grid):
    """(1 - mean cosine, d/dtau) with re-normalization of the warped vectors."""
    dims = mask.shape
    nmask = float(mask.sum())
    coords = base_grid + tau.reshape(3, -1)
    w, gz, gy, gx = interp.trilinear_with_coord_grad(moving_emb_data, coords)
    norm = np.sqrt((w * w).sum(axis=0))
    ok = norm > 1e-12
    safe = np.where(ok, norm, 1.0)
    s = w / safe
    sf = fixed_emb_data.reshape(fixed_emb_data.shape[0], -1)
    cos = (sf * s).sum(axis=0)
    maskf = mask.reshape(-1)
    value = 1.0 - float(cos[maskf].sum() / nmask)

    coef = np.where(maskf, ok / (safe * nmask), 0.0)
    grad = np.empty((3, coords.shape[1]), dtype=np.float64)
    for c, g in enumerate((gz, gy, gx)):
        a = (sf * g).sum(axis=0)
        b = (s * g).sum(axis=0)
        grad[c] = -coef * (a - cos * b)
    return value, grad.reshape((3,) + dims)


def _smooth_term(tau, mask):
    return losses.smoothness_value_and_grad(tau, mask)


def _total_loss_and_grad(level, tau, params: OptParams, radius, base_grid):
    fd, md, sfd, smd, mask = level
    v_ncc, g_ncc, _ = _ncc_term(fd, md, mask, radius, tau, base_grid)
    v_emb, g_emb = _embedding_term(sfd, smd, mask, tau, base_grid)
    v_sm, g_sm = _smooth_term(tau, mask)
    total = v_ncc + params.lambda_embedding * v_emb + params.gamma_smooth * v_sm
    grad = g_ncc + params.lambda_embedding * g_emb + params.gamma_smooth * g_sm
    return (v_ncc, v_emb, v_sm, total), grad


# ---------------------------------------------------------------------------
# Pyramid


def _renormalize(emb: np.ndarray) -> np.ndarray:
    norm = np.sqrt((emb * emb).sum(axis=0))
    safe = np.where(norm > 1e-12, norm, 1.0)
    return emb / safe


def _build_pyramid(fixed, moving, fixed_emb, moving_emb, mask, n_levels):
    levels = [(
        fixed.data.astype(np.float64),
        moving.data.astype(np.float64),
        fixed_emb.data.astype(np.float64),
        moving_emb.data.astype(np.float64),
        mask.data.copy(),
    )]
    for _ in range(1, n_levels):
        fd, md, sfd, smd, mk = levels[-1]
        levels.append((
            ops.downsample2(fd),
            ops.downsample2(md),
            _renormalize(ops.downsample2(sfd)),
            _renormalize(ops.downsample2(smd)),
            ops.downsample2_mask(mk),
        ))
    return levels


def _upsample_field(tau: np.ndarray, fine_dims) -> np.ndarray:
    grid = interp.voxel_grid(fine_dims)
    grid *= 0.5
    vals = interp.trilinear(tau, grid)
    return 2.0 * vals.reshape((3,) + tuple(fine_dims))


def _correlation_seed(sfd, smd, dims, radius=2):
    fe = EmbeddingVolume(sfd.astype(np.float32), normalized=True)
    me = EmbeddingVolume(smd.astype(np.float32), normalized=True)
    feat = losses.correlation_feature(fe, me, radius=radius)
    best = feat.data.argmax(axis=0)
    offsets = np.array(losses.correlation_offsets(radius), dtype=np.float64)
    tau = offsets[best.reshape(-1)].T.reshape((3,) + tuple(dims))
    return tau


# ---------------------------------------------------------------------------
# Public entry points


def optimize_field(
    fixed: Volume,
    moving: Volume,
    fixed_emb: EmbeddingVolume,
    moving_emb: EmbeddingVolume,
    mask: BodyMask,
    params: OptParams | None = None,
):
    """Estimate the displacement field registering `moving` onto `fixed`.

    Inputs are expected to be pre-aligned (affine and coarse stages) and
    share one grid. Returns (field, history) where history holds one
    LossReport per evaluated iteration.
    """
    params = params or OptParams()
    dims = fixed.dims
    for name, d in (("moving", moving.dims), ("fixed embedding", fixed_emb.dims),
                    ("moving embedding", moving_emb.dims), ("mask", mask.dims)):
        if tuple(d) != tuple(dims):
            raise ValueError(f"optimize_field: {name} dims {d} != fixed dims {dims}")

    n_levels = max(1, int(params.levels))
    pyramid = _build_pyramid(fixed, moving, fixed_emb, moving_emb, mask, n_levels)
    iters = params.iters_for(n_levels)
    radii = params.radii_for(n_levels)

    history: list[LossReport] = []
    tau = None
    for li in range(n_levels - 1, -1, -1):
        level = pyramid[li]
        level_dims = level[0].shape
        coarse_index = n_levels - 1 - li  # 0 at the coarsest level
        if tau is None:
            if params.init_from_correlation:
                tau = _correlation_seed(level[2], level[3], level_dims)
            else:
                tau = np.zeros((3,) + level_dims, dtype=np.float64)
        else:
            tau = _upsample_field(tau, level_dims)

        base_grid = interp.voxel_grid(level_dims)
        radius = radii[coarse_index]
        velocity = np.zeros_like(tau)
        step = None
        best_tau = tau.copy()
        best_total = np.inf
        best_trace: list[float] = []

        for it in range(iters[coarse_index]):
            (v_ncc, v_emb, v_sm, total), grad = _total_loss_and_grad(
                level, tau, params, radius, base_grid
            )
            history.append(LossReport(v_ncc, v_emb, v_sm, total, it, li))
            if not np.isfinite(total):
                logger.warning(
                    "non-finite loss at level %d iteration %d; keeping best field", li, it
                )
                break
            if total < best_total:
                best_total = total
                best_tau = tau.copy()
            best_trace.append(best_total)
            if len(best_trace) > params.patience:
                before = best_trace[-params.patience - 1]
                if before - best_total < params.tol * max(abs(before), 1e-12):
                    break
            gmax = float(np.abs(grad).max())
            if gmax < 1e-12:
                break
            if step is None:
                step = params.max_step_voxels / gmax
            velocity = params.momentum * velocity - step * grad
            tau = tau + velocity

        tau = best_tau

    return DisplacementField(tau.astype(np.float32)), history


_TERMS = ("smoothness", "embedding", "ncc")


def gradient_check(
    term: str,
    field: DisplacementField,
    samples: int = 50,
    *,
    fixed: Volume | None = None,
    moving: Volume | None = None,
    fixed_embedding: EmbeddingVolume | None = None,
    moving_embedding: EmbeddingVolume | None = None,
    mask: BodyMask | None = None,
    step: float = 1e-3,
    seed: int = 0,
    ncc_radius: int = 2,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples random (channel, voxel) coordinates inside the mask; for the
    interpolating terms, voxels whose warped coordinates fall near cell
    boundaries or the volume border are excluded (the interpolant has
    derivative kinks there). The relative error denominator is
    max(|analytic|, |finite difference|, 1e-8).
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    if term not in _TERMS:
        raise ValueError(f"unknown loss term {term!r}; expected one of {_TERMS}")
    tau = field.data.astype(np.float64)
    dims = field.dims
    mask_data = mask.data if mask is not None else np.ones(dims, dtype=bool)
    base_grid = interp.voxel_grid(dims)

    if term == "smoothness":
        def evaluate(t, need_grad=True):
            return losses.smoothness_value_and_grad(t, mask_data, need_grad=need_grad)
    elif term == "embedding":
        if fixed_embedding is None or moving_embedding is None:
            raise ValueError("embedding term needs fixed_embedding and moving_embedding")
        sfd = fixed_embedding.data.astype(np.float64)
        smd = moving_embedding.data.astype(np.float64)

        def evaluate(t, need_grad=True):
            return _embedding_term(sfd, smd, mask_data, t, base_grid)
    else:
        if fixed is None or moving is None:
            raise ValueError("ncc term needs fixed and moving volumes")
        fd = fixed.data.astype(np.float64)
        md = moving.data.astype(np.float64)

        def evaluate(t, need_grad=True):
            value, grad, _ = _ncc_term(fd, md, mask_data, ncc_radius, t, base_grid)
            return value, grad

    _, analytic = evaluate(tau)

    candidates = np.argwhere(mask_data)
    if term != "smoothness":
        coords = (base_grid + tau.reshape(3, -1)).reshape((3,) + dims)
        good = np.ones(dims, dtype=bool)
        for ax, n in enumerate(dims):
            c = coords[ax]
            frac = c - np.floor(c)
            good &= (c >= 1.0) & (c <= n - 2.0) & (frac > 0.1) & (frac < 0.9)
        candidates = candidates[good[tuple(candidates.T)]]
    if len(candidates) == 0:
        raise ValueError("no admissible sample voxels for the gradient check")

    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(candidates), size=samples)
    channels = rng.integers(0, 3, size=samples)

    max_rel = 0.0
    for pick, ch in zip(picks, channels):
        z, y, x = candidates[pick]
        tp = tau.copy()
        tp[ch, z, y, x] += step
        tm = tau.copy()
        tm[ch, z, y, x] -= step
        vp = evaluate(tp)[0]
        vm = evaluate(tm)[0]
        fd_grad = (vp - vm) / (2.0 * step)
        an = analytic[ch, z, y, x]
        rel = abs(fd_grad - an) / max(abs(fd_grad), abs(an), 1e-8)
        max_rel = max(max_rel, rel)
    return float(max_rel)
