"""Registration quality metrics: Dice overlap, surface distance, Jacobian stats."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .fields import DisplacementField
from .volume import BodyMask, _freeze

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelVolume:
    """Integer organ-label map on the same grid as its companion volume."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.int32)
        if arr.ndim != 3:
            raise ValueError(f"label data must be 3D, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def label_set(self) -> list[int]:
        values = np.unique(self.data)
        return [int(v) for v in values if v != 0]


@dataclass
class MetricsReport:
    """Per-label and mean scores; means average the per-label entries present."""

    per_label_dice: dict = field(default_factory=dict)
    mean_dice: float = float("nan")
    per_label_asd_mm: dict = field(default_factory=dict)
    mean_asd_mm: float = float("nan")
    jacobian_std: float | None = None
    jacobian_negative_fraction: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_label_dice": {str(k): v for k, v in self.per_label_dice.items()},
            "mean_dice": self.mean_dice,
            "per_label_asd_mm": {str(k): v for k, v in self.per_label_asd_mm.items()},
            "mean_asd_mm": self.mean_asd_mm,
            "jacobian_std": self.jacobian_std,
            "jacobian_negative_fraction": self.jacobian_negative_fraction,
        }

    def save_json(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path: str) -> None:
        labels = sorted(set(self.per_label_dice) | set(self.per_label_asd_mm))
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "dice", "asd_mm"])
            for lab in labels:
                writer.writerow([
                    lab,
                    f"{self.per_label_dice.get(lab, float('nan')):.9g}",
                    f"{self.per_label_asd_mm.get(lab, float('nan')):.9g}",
                ])
            writer.writerow(["mean", f"{self.mean_dice:.9g}", f"{self.mean_asd_mm:.9g}"])


def _check_dims(a: LabelVolume, b: LabelVolume):
    if a.dims != b.dims:
        raise ValueError(f"label dims {a.dims} != {b.dims}")


def dice(a: LabelVolume, b: LabelVolume):
    """Per-label Dice 2|A&B|/(|A|+|B|) and the mean over evaluated labels.

    Labels present in either volume are evaluated (a label missing from
    one side scores 0); labels absent from both are skipped.
    """
    _check_dims(a, b)
    labels = sorted(set(a.label_set) | set(b.label_set))
    per_label = {}
    for lab in labels:
        am = a.data == lab
        bm = b.data == lab
        denom = int(am.sum()) + int(bm.sum())
        inter = int(np.logical_and(am, bm).sum())
        per_label[lab] = 2.0 * inter / denom if denom else 0.0
    mean = float(np.mean(list(per_label.values()))) if per_label else float("nan")
    return per_label, mean


def _surface(mask: np.ndarray) -> np.ndarray:
    """Labeled voxels with at least one six-neighbor outside the label."""
    interior = np.ones_like(mask)
    for axis in range(3):
        lo = np.roll(mask, 1, axis=axis)
        hi = np.roll(mask, -1, axis=axis)
        # out-of-volume neighbors count as outside the label
        idx_lo = [slice(None)] * 3
        idx_lo[axis] = 0
        lo[tuple(idx_lo)] = False
        idx_hi = [slice(None)] * 3
        idx_hi[axis] = -1
        hi[tuple(idx_hi)] = False
        interior &= lo & hi
    return mask & ~interior


def average_surface_distance(a: LabelVolume, b: LabelVolume, spacing):
    """Symmetric mean surface distance per label, in millimeters.

    Pools the nearest-surface distances from both directions:
    (sum d(a->B) + sum d(b->A)) / (|surf A| + |surf B|). Labels empty in
    either volume are skipped (distance to an empty set is undefined) and
    reported in the returned skipped list.
    """
    _check_dims(a, b)
    spacing = tuple(float(s) for s in spacing)
    labels = sorted(set(a.label_set) | set(b.label_set))
    per_label = {}
    skipped = []
    for lab in labels:
        am = a.data == lab
        bm = b.data == lab
        if not am.any() or not bm.any():
            skipped.append(lab)
            continue
        sa = _surface(am)
        sb = _surface(bm)
        dist_to_b = ndimage.distance_transform_edt(~sb, sampling=spacing)
        dist_to_a = ndimage.distance_transform_edt(~sa, sampling=spacing)
        num = float(dist_to_b[sa].sum() + dist_to_a[sb].sum())
        den = int(sa.sum()) + int(sb.sum())
        per_label[lab] = num / den
    if skipped:
        logger.warning("ASD skipped %d label(s) empty on one side: %s", len(skipped), skipped)
    mean = float(np.mean(list(per_label.values()))) if per_label else float("nan")
    return per_label, mean, skipped


def jacobian_determinant_map(field: DisplacementField) -> np.ndarray:
    """det(I + grad tau) per voxel; central differences, one-sided at borders."""
    tau = field.data.astype(np.float64)
    jac = np.empty((3, 3) + field.dims, dtype=np.float64)
    for c in range(3):
        for ax in range(3):
            jac[c, ax] = np.gradient(tau[c], axis=ax)
        jac[c, c] += 1.0
    a, b, c_ = jac[0], jac[1], jac[2]
    det = (
        a[0] * (b[1] * c_[2] - b[2] * c_[1])
        - a[1] * (b[0] * c_[2] - b[2] * c_[0])
        + a[2] * (b[0] * c_[1] - b[1] * c_[0])
    )
    return det


def jacobian_stats(field: DisplacementField, mask: BodyMask):
    """(population std of det J, fraction of det J <= 0) over the mask."""
    if field.dims != mask.dims:
        raise ValueError(f"field dims {field.dims} != mask dims {mask.dims}")
    det = jacobian_determinant_map(field)[mask.data]
    if det.size == 0:
        raise ValueError("mask is empty")
    return float(det.std()), float((det <= 0).mean())


def evaluate(
    fixed_labels: LabelVolume,
    warped_labels: LabelVolume,
    spacing,
    field: DisplacementField | None = None,
    mask: BodyMask | None = None,
) -> MetricsReport:
    """Bundle Dice, ASD and (when a field is given) Jacobian statistics."""
    per_dice, mean_dice = dice(fixed_labels, warped_labels)
    per_asd, mean_asd, _ = average_surface_distance(fixed_labels, warped_labels, spacing)
    report = MetricsReport(per_dice, mean_dice, per_asd, mean_asd)
    if field is not None:
        if mask is None:
            mask = BodyMask(np.ones(field.dims, dtype=bool))
        std, neg = jacobian_stats(field, mask)
        report.jacobian_std = std
        report.jacobian_negative_fraction = neg
    return report
