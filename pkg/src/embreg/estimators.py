"""Scikit-learn style estimators wrapping the registration stages.

Each estimator follows the usual conventions: constructor arguments are
stored verbatim (so ``get_params``/``set_params``/``clone`` work), ``fit``
computes attributes with trailing underscores and returns ``self``, and
``transform`` warps data into fixed space. ``fit`` signatures take
``(fixed, moving)`` rather than ``(X, y)`` because registration pairs two
images instead of features and targets.
"""

from __future__ import annotations

import time

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import affine as affine_mod
from . import fields as fields_mod
from .embedding import synth_descriptors
from .errors import EmbregError, NoConfidentMatchesError, PipelineError
from .matching import grid_match
from .optimize import OptParams, optimize_field
from .validation import check_same_grid, ensure_embedding, ensure_labels, ensure_volume
from .volume import BodyMask, compute_body_mask

STAGE_ORDER = ("affine", "coarse", "deform")


def _check_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(
            f"{type(est).__name__} is not fitted yet; call fit() before transform()"
        )


def _resolve_mask(fixed, mask, body_threshold) -> BodyMask:
    if mask is not None:
        return mask
    return compute_body_mask(fixed, body_threshold)


class SyntheticDescriptorTransformer(BaseEstimator):
    """Stateless transformer producing deterministic multi-scale descriptors."""

    def __init__(self, channels: int = 16):
        self.channels = channels

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return synth_descriptors(ensure_volume(X), self.channels)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)


class AffineRegistration(BaseEstimator):
    """Grid matching plus least-squares affine fit (moving toward fixed).

    Fitted attributes: ``transform_`` (AffineTransform), ``residual_rms_``,
    ``matches_``, ``mask_``.
    """

    def __init__(
        self,
        grid_stride: int = 8,
        search_stride: int = 4,
        similarity_threshold: float = 0.7,
        body_threshold: float = -0.5,
        channels: int = 16,
    ):
        self.grid_stride = grid_stride
        self.search_stride = search_stride
        self.similarity_threshold = similarity_threshold
        self.body_threshold = body_threshold
        self.channels = channels

    def fit(self, fixed, moving, fixed_embedding=None, moving_embedding=None, mask=None):
        fixed = ensure_volume(fixed)
        moving = ensure_volume(moving)
        fe = (ensure_embedding(fixed_embedding) if fixed_embedding is not None
              else synth_descriptors(fixed, self.channels))
        me = (ensure_embedding(moving_embedding) if moving_embedding is not None
              else synth_descriptors(moving, self.channels))
        self.mask_ = _resolve_mask(fixed, mask, self.body_threshold)
        self.matches_ = grid_match(
            fe, me, self.mask_,
            grid_stride=self.grid_stride,
            threshold=self.similarity_threshold,
            search_stride=self.search_stride,
        )
        self.transform_, self.residual_rms_ = affine_mod.fit_affine(self.matches_)
        self.out_dims_ = fixed.dims
        return self

    def transform(self, X):
        _check_fitted(self, "transform_")
        return affine_mod.apply_affine(ensure_volume(X), self.transform_, self.out_dims_)


class CoarseRegistration(BaseEstimator):
    """Dense field interpolated from sparse grid correspondences.

    Expects inputs that are already roughly aligned (e.g. by
    AffineRegistration). Fitted attributes: ``field_``, ``matches_``,
    ``mask_``.
    """

    def __init__(
        self,
        grid_stride: int = 8,
        search_stride: int = 4,
        similarity_threshold: float = 0.7,
        body_threshold: float = -0.5,
        channels: int = 16,
    ):
        self.grid_stride = grid_stride
        self.search_stride = search_stride
        self.similarity_threshold = similarity_threshold
        self.body_threshold = body_threshold
        self.channels = channels

    def fit(self, fixed, moving, fixed_embedding=None, moving_embedding=None, mask=None):
        fixed = ensure_volume(fixed)
        moving = ensure_volume(moving)
        check_same_grid(fixed, moving, "coarse registration inputs")
        fe = (ensure_embedding(fixed_embedding) if fixed_embedding is not None
              else synth_descriptors(fixed, self.channels))
        me = (ensure_embedding(moving_embedding) if moving_embedding is not None
              else synth_descriptors(moving, self.channels))
        self.mask_ = _resolve_mask(fixed, mask, self.body_threshold)
        self.matches_ = grid_match(
            fe, me, self.mask_,
            grid_stride=self.grid_stride,
            threshold=self.similarity_threshold,
            search_stride=self.search_stride,
        )
        self.field_ = fields_mod.build_coarse_field(self.matches_, fixed.dims, self.grid_stride)
        return self

    def transform(self, X):
        _check_fitted(self, "field_")
        return fields_mod.warp_by_field(ensure_volume(X), self.field_)


class DeformableRegistration(BaseEstimator):
    """Direct optimization of a dense displacement field.

    Fitted attributes: ``field_``, ``history_`` (list of LossReport),
    ``mask_``.
    """

    def __init__(
        self,
        levels: int = 3,
        max_iter=(100, 50, 24),
        lambda_embedding: float = 1.0,
        gamma_smooth: float = 0.5,
        ncc_radius=None,
        tol: float = 1e-4,
        patience: int = 10,
        momentum: float = 0.9,
        max_step_voxels: float = 0.5,
        init_from_correlation: bool = False,
        body_threshold: float = -0.5,
        channels: int = 16,
    ):
        self.levels = levels
        self.max_iter = max_iter
        self.lambda_embedding = lambda_embedding
        self.gamma_smooth = gamma_smooth
        self.ncc_radius = ncc_radius
        self.tol = tol
        self.patience = patience
        self.momentum = momentum
        self.max_step_voxels = max_step_voxels
        self.init_from_correlation = init_from_correlation
        self.body_threshold = body_threshold
        self.channels = channels

    def _opt_params(self) -> OptParams:
        max_iter = self.max_iter if isinstance(self.max_iter, int) else tuple(self.max_iter)
        ncc_radius = self.ncc_radius
        if ncc_radius is not None and not isinstance(ncc_radius, int):
            ncc_radius = tuple(ncc_radius)
        return OptParams(
            levels=self.levels,
            max_iter=max_iter,
            momentum=self.momentum,
            lambda_embedding=self.lambda_embedding,
            gamma_smooth=self.gamma_smooth,
            ncc_radius=ncc_radius,
            tol=self.tol,
            patience=self.patience,
            max_step_voxels=self.max_step_voxels,
            init_from_correlation=self.init_from_correlation,
        )

    def fit(self, fixed, moving, fixed_embedding=None, moving_embedding=None, mask=None):
        fixed = ensure_volume(fixed)
        moving = ensure_volume(moving)
        check_same_grid(fixed, moving, "deformable registration inputs")
        fe = (ensure_embedding(fixed_embedding) if fixed_embedding is not None
              else synth_descriptors(fixed, self.channels))
        me = (ensure_embedding(moving_embedding) if moving_embedding is not None
              else synth_descriptors(moving, self.channels))
        self.mask_ = _resolve_mask(fixed, mask, self.body_threshold)
        self.field_, self.history_ = optimize_field(
            fixed, moving, fe, me, self.mask_, self._opt_params()
        )
        return self

    def transform(self, X):
        _check_fitted(self, "field_")
        return fields_mod.warp_by_field(ensure_volume(X), self.field_)


class CascadeRegistration(BaseEstimator):
    """Three-stage cascade: affine, coarse field, deformable refinement.

    Stage subsets keep the canonical order and the coarse stage requires
    the affine one. When no embeddings are passed to ``fit``, synthetic
    descriptors are generated and re-synthesized from the affine-warped
    moving image; externally supplied embeddings are instead warped
    channel-wise and re-normalized.

    Fitted attributes include ``mask_``, ``affine_``, ``residual_rms_``,
    ``stage_fields_`` (per-stage field), ``total_fields_`` (composed up to
    each stage), ``total_field_``, ``warped_`` (per-stage moving image),
    ``history_`` and ``timings_``.
    """

    def __init__(
        self,
        stages=STAGE_ORDER,
        channels: int = 16,
        grid_stride: int = 8,
        search_stride: int = 4,
        similarity_threshold: float = 0.7,
        body_threshold: float = -0.5,
        levels: int = 3,
        max_iter=(100, 50, 24),
        lambda_embedding: float = 1.0,
        gamma_smooth: float = 0.5,
        ncc_radius=None,
        tol: float = 1e-4,
        patience: int = 10,
        momentum: float = 0.9,
        max_step_voxels: float = 0.5,
        init_from_correlation: bool = False,
    ):
        self.stages = stages
        self.channels = channels
        self.grid_stride = grid_stride
        self.search_stride = search_stride
        self.similarity_threshold = similarity_threshold
        self.body_threshold = body_threshold
        self.levels = levels
        self.max_iter = max_iter
        self.lambda_embedding = lambda_embedding
        self.gamma_smooth = gamma_smooth
        self.ncc_radius = ncc_radius
        self.tol = tol
        self.patience = patience
        self.momentum = momentum
        self.max_step_voxels = max_step_voxels
        self.init_from_correlation = init_from_correlation

    def _validated_stages(self) -> tuple:
        stages = tuple(self.stages)
        if not stages:
            raise ValueError("stage list is empty")
        for s in stages:
            if s not in STAGE_ORDER:
                raise ValueError(f"unknown stage {s!r}; expected subset of {STAGE_ORDER}")
        ordered = tuple(s for s in STAGE_ORDER if s in stages)
        if ordered != stages:
            raise ValueError(
                f"stages must follow the order {STAGE_ORDER}, got {stages}"
            )
        if "coarse" in stages and "affine" not in stages:
            raise ValueError("the coarse stage requires the affine stage before it")
        return stages

    def fit(self, fixed, moving, fixed_embedding=None, moving_embedding=None, mask=None):
        stages = self._validated_stages()
        fixed = ensure_volume(fixed)
        moving = ensure_volume(moving)
        synthetic = moving_embedding is None
        fe = (ensure_embedding(fixed_embedding) if fixed_embedding is not None
              else synth_descriptors(fixed, self.channels))
        me = (ensure_embedding(moving_embedding) if moving_embedding is not None
              else synth_descriptors(moving, self.channels))
        self.fixed_ = fixed
        self.moving_ = moving
        self.mask_ = _resolve_mask(fixed, mask, self.body_threshold)

        dims = fixed.dims
        current = moving
        current_emb = me
        total = None
        self.stage_fields_ = {}
        self.total_fields_ = {}
        self.warped_ = {}
        self.timings_ = {}
        self.history_ = []
        self.affine_ = None
        self.residual_rms_ = None

        for stage in stages:
            t0 = time.perf_counter()
            try:
                if stage == "affine":
                    matches = grid_match(
                        fe, me, self.mask_,
                        grid_stride=self.grid_stride,
                        threshold=self.similarity_threshold,
                        search_stride=self.search_stride,
                    )
                    self.affine_matches_ = matches
                    self.affine_, self.residual_rms_ = affine_mod.fit_affine(matches)
                    stage_field = fields_mod.field_from_affine(self.affine_, dims)
                    current = affine_mod.apply_affine(moving, self.affine_, dims)
                    if synthetic:
                        current_emb = synth_descriptors(current, self.channels)
                    else:
                        current_emb = affine_mod.apply_affine_embedding(me, self.affine_, dims)
                elif stage == "coarse":
                    matches = grid_match(
                        fe, current_emb, self.mask_,
                        grid_stride=self.grid_stride,
                        threshold=self.similarity_threshold,
                        search_stride=self.search_stride,
                    )
                    self.coarse_matches_ = matches
                    stage_field = fields_mod.build_coarse_field(matches, dims, self.grid_stride)
                    current = fields_mod.warp_by_field(current, stage_field)
                    current_emb = fields_mod.warp_embedding_by_field(current_emb, stage_field)
                else:  # deform
                    deform = DeformableRegistration(
                        levels=self.levels,
                        max_iter=self.max_iter,
                        lambda_embedding=self.lambda_embedding,
                        gamma_smooth=self.gamma_smooth,
                        ncc_radius=self.ncc_radius,
                        tol=self.tol,
                        patience=self.patience,
                        momentum=self.momentum,
                        max_step_voxels=self.max_step_voxels,
                        init_from_correlation=self.init_from_correlation,
                    )
                    deform.fit(fixed, current, fe, current_emb, mask=self.mask_)
                    stage_field = deform.field_
                    self.history_ = deform.history_
                    current = fields_mod.warp_by_field(current, stage_field)
                    current_emb = fields_mod.warp_embedding_by_field(current_emb, stage_field)
            except PipelineError:
                raise
            except (EmbregError, ValueError) as exc:
                hint = ""
                if isinstance(exc, NoConfidentMatchesError):
                    hint = "; consider lowering the similarity threshold"
                raise PipelineError(stage, f"{exc}{hint}") from exc

            total = stage_field if total is None else fields_mod.compose_fields(total, stage_field)
            self.stage_fields_[stage] = stage_field
            self.total_fields_[stage] = total
            self.warped_[stage] = current
            self.timings_[stage] = time.perf_counter() - t0

        self.total_field_ = total
        self.fixed_embedding_ = fe
        self.final_embedding_ = current_emb
        return self

    def transform(self, X=None, labels=None):
        """Warp a volume (default: the fitted moving image) or a label map."""
        _check_fitted(self, "total_field_")
        if labels is not None:
            lab = ensure_labels(labels)
            return fields_mod.warp_labels_by_field(lab.data, self.total_field_)
        volume = self.moving_ if X is None else ensure_volume(X)
        return fields_mod.warp_by_field(volume, self.total_field_)

    def fit_transform(self, fixed, moving, **fit_kwargs):
        return self.fit(fixed, moving, **fit_kwargs).transform()
