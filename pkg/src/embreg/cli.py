"""Command-line interface.

Subcommands: register, embed synth, match, fit-affine, warp, metrics,
slices, gradcheck. Exit code 0 on success; on failure a stage-tagged
message goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import io as vio
from .affine import apply_affine, fit_affine, load_affine, save_affine
from .embedding import load_embedding, normalize_embedding, save_embedding, synth_descriptors
from .errors import EmbregError, PipelineError
from .fields import DisplacementField, load_field, warp_by_field, warp_labels_by_field
from .matching import MatchSet, grid_match
from .metrics import LabelVolume, evaluate
from .optimize import gradient_check
from .pipeline import PipelineConfig, run_pipeline
from .viz import emit_slices
from .volume import BodyMask, Volume, compute_body_mask


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _cmd_register(args) -> int:
    overrides = _parse_overrides(args.set)
    for key in ("fixed", "moving", "out_dir", "stages"):
        value = getattr(args, key if key != "out_dir" else "out")
        if value:
            overrides[key] = value
    if args.config:
        cfg = PipelineConfig.from_file(args.config, overrides)
    else:
        cfg = PipelineConfig.from_dict(overrides)
    report = run_pipeline(cfg)
    for stage in report.stages:
        line = f"{stage}: {report.times[stage]:.2f}s"
        if stage in report.metrics:
            line += f"  mean dice {report.metrics[stage]['mean_dice']:.4f}"
        print(line)
    if report.match_count is not None:
        print(f"affine matches k={report.match_count} residual rms={report.residual_rms:.4f}")
    print(f"report: {cfg.out_dir}/report.json")
    return 0


def _cmd_embed_synth(args) -> int:
    volume = vio.load_volume(args.volume)
    emb = synth_descriptors(volume, args.channels)
    save_embedding(emb, args.out, volume.spacing, volume.origin)
    print(f"wrote {args.out} (C={emb.channels}, dims={emb.dims})")
    return 0


def _load_embedding_or_synth(emb_path, vol_path, channels):
    if emb_path:
        return normalize_embedding(load_embedding(emb_path))
    if vol_path:
        return synth_descriptors(vio.load_volume(vol_path), channels)
    raise ValueError("need an embedding file or a volume to synthesize from")


def _cmd_match(args) -> int:
    fixed_emb = _load_embedding_or_synth(args.fixed_embedding, args.fixed, args.channels)
    moving_emb = _load_embedding_or_synth(args.moving_embedding, args.moving, args.channels)
    if args.fixed:
        mask = compute_body_mask(vio.load_volume(args.fixed), args.body_threshold)
    else:
        mask = BodyMask(np.ones(fixed_emb.dims, dtype=bool))
    matches = grid_match(
        fixed_emb, moving_emb, mask,
        grid_stride=args.grid_stride,
        threshold=args.threshold,
        search_stride=args.search_stride,
    )
    with open(args.out, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["zf", "yf", "xf", "zm", "ym", "xm", "similarity"])
        for i in range(matches.k):
            pf = matches.fixed_points[i]
            pm = matches.moving_points[i]
            writer.writerow([
                f"{pf[0]:g}", f"{pf[1]:g}", f"{pf[2]:g}",
                f"{pm[0]:g}", f"{pm[1]:g}", f"{pm[2]:g}",
                f"{matches.similarities[i]:.9g}",
            ])
    print(f"wrote {matches.k} matches to {args.out}")
    return 0


def _read_matches_csv(path: str) -> MatchSet:
    rows = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append([float(row[k]) for k in ("zf", "yf", "xf", "zm", "ym", "xm", "similarity")])
    arr = np.array(rows, dtype=np.float64).reshape(-1, 7)
    return MatchSet(arr[:, 0:3], arr[:, 3:6], arr[:, 6])


def _cmd_fit_affine(args) -> int:
    matches = _read_matches_csv(args.matches)
    transform, rms = fit_affine(matches)
    save_affine(transform, args.out)
    print(f"k={matches.k} residual rms={rms:.6f} voxels")
    print(f"wrote {args.out}")
    return 0


def _cmd_warp(args) -> int:
    if bool(args.affine) == bool(args.field):
        raise ValueError("pass exactly one of --affine or --field")
    if args.labels:
        labels = vio.load_labels(args.input)
        if args.affine:
            from .fields import field_from_affine

            field = field_from_affine(load_affine(args.affine), labels.shape)
        else:
            field = load_field(args.field)
        out = warp_labels_by_field(labels, field)
        vio.save_labels(out, args.out)
    else:
        volume = vio.load_volume(args.input)
        if args.affine:
            out = apply_affine(volume, load_affine(args.affine))
        else:
            out = warp_by_field(volume, load_field(args.field))
        vio.save_volume(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    fixed_labels = LabelVolume(vio.load_labels(args.fixed_labels))
    moving = vio.load_labels(args.moving_labels)
    field = load_field(args.field) if args.field else None
    if field is not None:
        moving = warp_labels_by_field(moving, field)
    spacing = tuple(float(t) for t in args.spacing.split(","))
    mask = None
    if args.mask_from:
        mask = compute_body_mask(vio.load_volume(args.mask_from), args.body_threshold)
    report = evaluate(fixed_labels, LabelVolume(moving), spacing, field=field, mask=mask)
    report.save_json(args.out)
    if args.csv:
        report.save_csv(args.csv)
    print(f"mean dice {report.mean_dice:.4f}  mean asd {report.mean_asd_mm:.4f} mm")
    if report.jacobian_std is not None:
        print(
            f"jacobian std {report.jacobian_std:.6f}  "
            f"negative fraction {report.jacobian_negative_fraction:.6f}"
        )
    print(f"wrote {args.out}")
    return 0


def _cmd_slices(args) -> int:
    volumes = [vio.load_volume(p) for p in args.volume]
    labels = LabelVolume(vio.load_labels(args.labels)) if args.labels else None
    names = [f"volume{i}" for i in range(len(volumes))] if len(volumes) > 1 else ["volume"]
    index = args.index if args.index >= 0 else None
    paths = emit_slices(volumes, labels=labels, axis=args.axis, index=index,
                        out_dir=args.out, names=names)
    for p in paths:
        print(p)
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    n = args.size
    dims = (n, n, n)
    tau = rng.normal(scale=0.5, size=(3,) + dims).astype(np.float32)
    field = DisplacementField(tau)
    mask = BodyMask(np.ones(dims, dtype=bool))
    kwargs = {"mask": mask, "seed": args.seed, "samples": args.samples}
    if args.term in ("ncc", "all"):
        fixed = Volume(rng.uniform(-1, 1, size=dims).astype(np.float32))
        moving = Volume(rng.uniform(-1, 1, size=dims).astype(np.float32))
        err = gradient_check("ncc", field, fixed=fixed, moving=moving, **kwargs)
        print(f"ncc: max relative error {err:.3e}")
    if args.term in ("embedding", "all"):
        def _smooth_emb():
            from scipy import ndimage

            raw = ndimage.gaussian_filter(
                rng.normal(size=(8,) + dims), sigma=(0, 2, 2, 2)
            ).astype(np.float32)
            from .embedding import EmbeddingVolume

            return normalize_embedding(EmbeddingVolume(raw))

        err = gradient_check(
            "embedding", field,
            fixed_embedding=_smooth_emb(), moving_embedding=_smooth_emb(), **kwargs,
        )
        print(f"embedding: max relative error {err:.3e}")
    if args.term in ("smoothness", "all"):
        err = gradient_check("smoothness", field, **kwargs)
        print(f"smoothness: max relative error {err:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embreg",
        description="Embedding-guided 3D registration: affine, coarse and deformable stages.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="run the full pipeline")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--fixed")
    p.add_argument("--moving")
    p.add_argument("--out", help="output directory")
    p.add_argument("--stages", help="comma list from affine,coarse,deform")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("embed", help="embedding utilities")
    esub = p.add_subparsers(dest="embed_command", required=True)
    ps = esub.add_parser("synth", help="materialize synthetic descriptors")
    ps.add_argument("--volume", required=True)
    ps.add_argument("--channels", type=int, default=16)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=_cmd_embed_synth)

    p = sub.add_parser("match", help="grid-match two embedding volumes")
    p.add_argument("--fixed", help="fixed volume (mask source / synth input)")
    p.add_argument("--moving", help="moving volume (synth input)")
    p.add_argument("--fixed-embedding", dest="fixed_embedding")
    p.add_argument("--moving-embedding", dest="moving_embedding")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--grid-stride", type=int, default=8)
    p.add_argument("--search-stride", type=int, default=4)
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--body-threshold", type=float, default=-0.5)
    p.add_argument("--out", required=True, help="matches CSV path")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("fit-affine", help="least-squares affine from a matches CSV")
    p.add_argument("--matches", required=True)
    p.add_argument("--out", required=True, help=".aff output path")
    p.set_defaults(func=_cmd_fit_affine)

    p = sub.add_parser("warp", help="warp a volume or label map")
    p.add_argument("--input", required=True)
    p.add_argument("--affine", help=".aff file")
    p.add_argument("--field", help=".evol displacement field")
    p.add_argument("--labels", action="store_true", help="nearest-neighbor label warp")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("metrics", help="Dice / surface distance / Jacobian stats")
    p.add_argument("--fixed-labels", dest="fixed_labels", required=True)
    p.add_argument("--moving-labels", dest="moving_labels", required=True)
    p.add_argument("--field", help="warp moving labels by this field first")
    p.add_argument("--spacing", default="1,1,1")
    p.add_argument("--mask-from", dest="mask_from", help="volume for the body mask")
    p.add_argument("--body-threshold", type=float, default=-0.5)
    p.add_argument("--out", required=True, help="JSON output")
    p.add_argument("--csv", help="optional CSV output")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("slices", help="write grayscale slice PNGs")
    p.add_argument("--volume", action="append", required=True)
    p.add_argument("--labels")
    p.add_argument("--axis", default="z")
    p.add_argument("--index", type=int, default=-1, help="-1 means the middle slice")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_slices)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--term", choices=["ncc", "embedding", "smoothness", "all"], default="all")
    p.add_argument("--size", type=int, default=10)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (EmbregError, ValueError, OSError) as exc:
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
