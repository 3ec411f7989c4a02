"""Embedding-guided 3D volumetric registration.

A three-stage cascade: least-squares affine alignment from per-voxel
descriptor matches, a coarse dense field interpolated from sparse grid
correspondences, and deformable refinement by direct optimization of a
composite loss (local NCC + descriptor similarity + smoothness), plus
Dice / surface-distance / Jacobian evaluation tools and a CLI.
"""

from .affine import AffineTransform, apply_affine, apply_affine_embedding, fit_affine, load_affine, save_affine
from .embedding import (
    EmbeddingVolume,
    load_embedding,
    normalize_embedding,
    save_embedding,
    synth_descriptors,
)
from .errors import (
    DegenerateConfigurationError,
    EmbregError,
    InsufficientCorrespondencesError,
    NoBodyFoundError,
    NoConfidentMatchesError,
    PipelineError,
    VolumeIOError,
)
from .estimators import (
    AffineRegistration,
    CascadeRegistration,
    CoarseRegistration,
    DeformableRegistration,
    SyntheticDescriptorTransformer,
)
from .fields import (
    DisplacementField,
    build_coarse_field,
    compose_fields,
    field_from_affine,
    load_field,
    save_field,
    warp_by_field,
    warp_embedding_by_field,
    warp_labels_by_field,
)
from .io import load_labels, load_volume, save_labels, save_volume
from .losses import (
    CorrelationFeature,
    correlation_feature,
    embedding_loss,
    local_ncc_loss,
    smoothness_loss,
)
from .matching import MatchSet, grid_match, match_point
from .metrics import (
    LabelVolume,
    MetricsReport,
    average_surface_distance,
    dice,
    evaluate,
    jacobian_stats,
)
from .optimize import LossReport, OptParams, gradient_check, optimize_field
from .pipeline import PipelineConfig, RunReport, run_pipeline
from .viz import emit_slices
from .volume import (
    BodyMask,
    Volume,
    compute_body_mask,
    crop_volume,
    resample_isotropic,
    resample_labels,
    window_normalize,
)

__version__ = "0.1.0"

__all__ = [
    "AffineRegistration",
    "AffineTransform",
    "BodyMask",
    "CascadeRegistration",
    "CoarseRegistration",
    "CorrelationFeature",
    "DeformableRegistration",
    "DegenerateConfigurationError",
    "DisplacementField",
    "EmbeddingVolume",
    "EmbregError",
    "InsufficientCorrespondencesError",
    "LabelVolume",
    "LossReport",
    "MatchSet",
    "MetricsReport",
    "NoBodyFoundError",
    "NoConfidentMatchesError",
    "OptParams",
    "PipelineConfig",
    "PipelineError",
    "RunReport",
    "SyntheticDescriptorTransformer",
    "Volume",
    "VolumeIOError",
    "apply_affine",
    "apply_affine_embedding",
    "average_surface_distance",
    "build_coarse_field",
    "compose_fields",
    "compute_body_mask",
    "correlation_feature",
    "crop_volume",
    "dice",
    "embedding_loss",
    "emit_slices",
    "evaluate",
    "field_from_affine",
    "fit_affine",
    "gradient_check",
    "grid_match",
    "jacobian_stats",
    "load_affine",
    "load_embedding",
    "load_field",
    "load_labels",
    "load_volume",
    "local_ncc_loss",
    "match_point",
    "normalize_embedding",
    "optimize_field",
    "resample_isotropic",
    "resample_labels",
    "run_pipeline",
    "save_affine",
    "save_embedding",
    "save_field",
    "save_labels",
    "save_volume",
    "smoothness_loss",
    "synth_descriptors",
    "warp_by_field",
    "warp_embedding_by_field",
    "warp_labels_by_field",
    "window_normalize",
]
