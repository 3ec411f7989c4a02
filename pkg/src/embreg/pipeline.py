"""End-to-end pipeline: preprocessing, cascade, reporting, artifacts.

Configuration is a flat key = value text file plus programmatic or CLI
overrides. A run is deterministic for a given config and inputs: fields,
metrics files and slice PNGs are bitwise reproducible; only the timing
entries of report.json vary between runs.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields as dataclass_fields

from . import io as vio
from .embedding import load_embedding, normalize_embedding
from .errors import PipelineError
from .estimators import STAGE_ORDER, CascadeRegistration
from .fields import save_field, warp_labels_by_field
from .metrics import LabelVolume, evaluate
from .viz import emit_slices
from .volume import Volume, crop_volume, resample_isotropic, resample_labels, window_normalize

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Flat run configuration; every knob has a CLI/file override.

    Defaults follow the documented CT use case (intensity window
    (-800, 400) HU, 2 mm isotropic resampling, similarity threshold 0.7,
    grid stride 8, search stride 4, loss weights 1.0 / 0.5); synthetic
    inputs normally disable windowing and resampling.
    """

    fixed: str = ""
    moving: str = ""
    fixed_labels: str = ""
    moving_labels: str = ""
    fixed_embedding: str = ""  # empty: synthesize descriptors
    moving_embedding: str = ""
    out_dir: str = "out"
    stages: str = "affine,coarse,deform"
    channels: int = 16
    grid_stride: int = 8
    search_stride: int = 4
    similarity_threshold: float = 0.7
    body_threshold: float = -0.5
    apply_window: bool = True
    window_lo: float = -800.0
    window_hi: float = 400.0
    resample: bool = True
    target_spacing: float = 2.0
    crop: str = ""  # "z0:z1,y0:y1,x0:x1" applied to both inputs
    lambda_embedding: float = 1.0
    gamma_smooth: float = 0.5
    levels: int = 3
    max_iter: str = "100,50,24"
    ncc_radius: str = ""  # empty: 2 at coarsest up to 4 at finest
    tol: float = 1e-4
    patience: int = 10
    momentum: float = 0.9
    max_step_voxels: float = 0.5
    init_from_correlation: bool = False
    seed: int = 0
    emit_slices: bool = False
    slice_axis: str = "z"
    slice_index: int = -1  # -1: middle slice

    # -- parsing ---------------------------------------------------------

    @classmethod
    def from_file(cls, path: str, overrides: dict | None = None) -> "PipelineConfig":
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, value = (t.strip() for t in line.split("=", 1))
                values[key] = value
        if overrides:
            values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "PipelineConfig":
        cfg = cls()
        cfg.apply(values)
        return cfg

    def apply(self, values: dict) -> "PipelineConfig":
        types = {f.name: f.type for f in dataclass_fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(current, bool):
                if isinstance(raw, bool):
                    parsed = raw
                elif str(raw).lower() in ("true", "1", "yes", "on"):
                    parsed = True
                elif str(raw).lower() in ("false", "0", "no", "off"):
                    parsed = False
                else:
                    raise ValueError(f"config key {key!r}: cannot parse bool from {raw!r}")
            elif isinstance(current, int):
                parsed = int(raw)
            elif isinstance(current, float):
                parsed = float(raw)
            else:
                parsed = str(raw)
            setattr(self, key, parsed)
        return self

    # -- derived values --------------------------------------------------

    def stage_list(self) -> tuple:
        stages = tuple(s.strip() for s in self.stages.split(",") if s.strip())
        if not stages:
            raise ValueError("config error: no stages selected")
        for s in stages:
            if s not in STAGE_ORDER:
                raise ValueError(f"config error: unknown stage {s!r}")
        ordered = tuple(s for s in STAGE_ORDER if s in stages)
        if ordered != stages:
            raise ValueError(f"config error: stages must follow order {STAGE_ORDER}")
        if "coarse" in stages and "affine" not in stages:
            raise ValueError("config error: the coarse stage requires the affine stage")
        return stages

    def max_iter_tuple(self) -> tuple:
        return tuple(int(t) for t in self.max_iter.split(",") if t.strip())

    def ncc_radius_value(self):
        if not self.ncc_radius.strip():
            return None
        parts = [int(t) for t in self.ncc_radius.split(",") if t.strip()]
        return parts[0] if len(parts) == 1 else tuple(parts)

    def crop_bounds(self):
        if not self.crop.strip():
            return None
        try:
            ranges = []
            for part in self.crop.split(","):
                lo, hi = part.split(":")
                ranges.append((int(lo), int(hi)))
            if len(ranges) != 3:
                raise ValueError
        except ValueError:
            raise ValueError(
                f"config error: crop must be 'z0:z1,y0:y1,x0:x1', got {self.crop!r}"
            ) from None
        lo = tuple(r[0] for r in ranges)
        hi = tuple(r[1] for r in ranges)
        return lo, hi

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in dataclass_fields(self):
                fh.write(f"{f.name} = {getattr(self, f.name)}\n")


@dataclass
class RunReport:
    """Summary of one pipeline run; times are wall-clock seconds per stage."""

    stages: tuple = ()
    times: dict = field(default_factory=dict)
    match_count: int | None = None
    residual_rms: float | None = None
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    history_csv: str | None = None

    def save_json(self, path: str) -> None:
        payload = asdict(self)
        payload["stages"] = list(self.stages)
        with open(path, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _preprocess(volume: Volume, labels, cfg: PipelineConfig):
    bounds = cfg.crop_bounds()
    if bounds is not None:
        volume = crop_volume(volume, *bounds)
        if labels is not None:
            labels = labels[
                bounds[0][0]:bounds[1][0], bounds[0][1]:bounds[1][1], bounds[0][2]:bounds[1][2]
            ]
    if cfg.apply_window:
        volume = window_normalize(volume, cfg.window_lo, cfg.window_hi)
    if cfg.resample:
        src_spacing = volume.spacing
        volume = resample_isotropic(volume, cfg.target_spacing)
        if labels is not None:
            labels = resample_labels(labels, src_spacing, cfg.target_spacing)
    if labels is not None and labels.shape != volume.dims:
        raise ValueError(
            f"labels shape {labels.shape} does not match volume dims {volume.dims}"
        )
    return volume, labels


def _write_history_csv(history, path: str) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "level", "ncc", "embedding", "smooth", "total"])
        for rec in history:
            writer.writerow([
                rec.iteration, rec.level,
                f"{rec.ncc:.12g}", f"{rec.embedding:.12g}",
                f"{rec.smooth:.12g}", f"{rec.total:.12g}",
            ])


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Execute preprocessing, embeddings and the enabled cascade stages.

    Writes, under cfg.out_dir: the warped moving image, stage field and
    composed total field after each stage, metrics (JSON + CSV) when
    labels are given, the deformable loss history CSV, optional slice
    PNGs and a report.json. Raises PipelineError with the failing stage's
    name on any stage failure.
    """
    stages = cfg.stage_list()
    os.makedirs(cfg.out_dir, exist_ok=True)

    def _load(path, what):
        try:
            return vio.load_volume(path)
        except Exception as exc:
            raise PipelineError("load", f"cannot load {what} volume {path!r}: {exc}") from exc

    if not cfg.fixed or not cfg.moving:
        raise PipelineError("load", "config needs both 'fixed' and 'moving' paths")
    fixed = _load(cfg.fixed, "fixed")
    moving = _load(cfg.moving, "moving")
    fixed_labels = vio.load_labels(cfg.fixed_labels) if cfg.fixed_labels else None
    moving_labels = vio.load_labels(cfg.moving_labels) if cfg.moving_labels else None

    try:
        fixed, fixed_labels = _preprocess(fixed, fixed_labels, cfg)
        moving, moving_labels = _preprocess(moving, moving_labels, cfg)
    except ValueError as exc:
        raise PipelineError("preprocess", str(exc)) from exc

    fixed_emb = moving_emb = None
    if cfg.fixed_embedding or cfg.moving_embedding:
        if not (cfg.fixed_embedding and cfg.moving_embedding):
            raise PipelineError(
                "embeddings", "provide both fixed_embedding and moving_embedding, or neither"
            )
        try:
            fixed_emb = normalize_embedding(load_embedding(cfg.fixed_embedding))
            moving_emb = normalize_embedding(load_embedding(cfg.moving_embedding))
        except Exception as exc:
            raise PipelineError("embeddings", str(exc)) from exc

    cascade = CascadeRegistration(
        stages=stages,
        channels=cfg.channels,
        grid_stride=cfg.grid_stride,
        search_stride=cfg.search_stride,
        similarity_threshold=cfg.similarity_threshold,
        body_threshold=cfg.body_threshold,
        levels=cfg.levels,
        max_iter=cfg.max_iter_tuple(),
        lambda_embedding=cfg.lambda_embedding,
        gamma_smooth=cfg.gamma_smooth,
        ncc_radius=cfg.ncc_radius_value(),
        tol=cfg.tol,
        patience=cfg.patience,
        momentum=cfg.momentum,
        max_step_voxels=cfg.max_step_voxels,
        init_from_correlation=cfg.init_from_correlation,
    )
    cascade.fit(fixed, moving, fixed_embedding=fixed_emb, moving_embedding=moving_emb)

    report = RunReport(stages=stages, times=dict(cascade.timings_))
    if cascade.affine_ is not None:
        report.match_count = cascade.affine_matches_.k
        report.residual_rms = cascade.residual_rms_

    def _artifact(name):
        return os.path.join(cfg.out_dir, name)

    fixed_lab_vol = LabelVolume(fixed_labels) if fixed_labels is not None else None
    for stage in stages:
        warped = cascade.warped_[stage]
        vio.save_volume(warped, _artifact(f"warped_{stage}.evol"))
        save_field(cascade.stage_fields_[stage], _artifact(f"field_{stage}.evol"))
        save_field(cascade.total_fields_[stage], _artifact(f"field_total_{stage}.evol"))
        report.artifacts[f"warped_{stage}"] = _artifact(f"warped_{stage}.evol")
        report.artifacts[f"field_{stage}"] = _artifact(f"field_{stage}.evol")

        if fixed_lab_vol is not None and moving_labels is not None:
            warped_labels = warp_labels_by_field(moving_labels, cascade.total_fields_[stage])
            stage_metrics = evaluate(
                fixed_lab_vol, LabelVolume(warped_labels), fixed.spacing,
                field=cascade.total_fields_[stage], mask=cascade.mask_,
            )
            stage_metrics.save_json(_artifact(f"metrics_{stage}.json"))
            stage_metrics.save_csv(_artifact(f"metrics_{stage}.csv"))
            report.metrics[stage] = stage_metrics.to_dict()

    if cascade.affine_ is not None:
        from .affine import save_affine

        save_affine(cascade.affine_, _artifact("affine.aff"))
        report.artifacts["affine"] = _artifact("affine.aff")
    save_field(cascade.total_field_, _artifact("field_total.evol"))
    report.artifacts["field_total"] = _artifact("field_total.evol")

    if cascade.history_:
        history_path = _artifact("loss_history.csv")
        _write_history_csv(cascade.history_, history_path)
        report.history_csv = history_path

    if cfg.emit_slices:
        panels = [fixed, moving] + [cascade.warped_[s] for s in stages]
        names = ["fixed", "moving"] + [f"warped_{s}" for s in stages]
        index = cfg.slice_index if cfg.slice_index >= 0 else None
        paths = emit_slices(
            panels, labels=fixed_lab_vol, axis=cfg.slice_axis, index=index,
            out_dir=os.path.join(cfg.out_dir, "slices"), names=names,
        )
        report.artifacts["slices"] = paths

    report.save_json(_artifact("report.json"))
    logger.info("pipeline finished: stages=%s out=%s", ",".join(stages), cfg.out_dir)
    return report
