"""Command-line interface.

Subcommands: eval (benchmark a prediction file), lift (2D-to-3D lifting over
a dataset), synth (generate synthetic scenes), sample (balanced split
selection), iou (exact vs Monte-Carlo box overlap). Every subcommand is
deterministic given its inputs, flags, and seed; --threads is accepted for
interface stability but never changes output bytes (work runs serially).

Exit codes: 0 success, 1 internal error, 2 user or input error. Output
files are written atomically and carry the effective configuration under a
"config" key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataio
from .camera import CameraModel
from .evaluation import evaluate
from .filters import geometric_filter, occlusion_ratio, ratio_filters, size_filter
from .geometry import Box3D, iou3d, iou3d_monte_carlo
from .lifting import OptimizerConfig, lift_annotation
from .sampler import SamplerTargets, sample_eval_split
from .synth import SynthScene, SynthSpec, synth_scene

__all__ = ["main"]


class InputError(ValueError):
    """User-correctable problem: bad paths, malformed files, bad flags."""


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MONO3DKIT_THREADS", "1")))
    except ValueError:
        return 1


def _add_threads(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="accepted for interface stability; processing is serial and "
        "output bytes never depend on it",
    )


def _config_echo(args: argparse.Namespace) -> dict:
    cfg = {}
    for key, val in sorted(vars(args).items()):
        if key in ("func", "command"):
            continue
        cfg[key] = val if isinstance(val, (int, float, bool, str, type(None))) else list(val)
    return cfg


def _read_dataset(path: str) -> dataio.DatasetFile:
    if not os.path.exists(path):
        raise InputError(f"no such file: {path}")
    try:
        return dataio.read_dataset(path)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _cmd_eval(args) -> int:
    gt = _read_dataset(args.gt)
    pred = _read_dataset(args.pred)
    symmetric = ()
    if args.symmetric_categories:
        if not os.path.exists(args.symmetric_categories):
            raise InputError(f"no such file: {args.symmetric_categories}")
        with open(args.symmetric_categories, "r", encoding="utf-8") as f:
            symmetric = tuple(line.strip() for line in f if line.strip())
    try:
        dets = dataio.detections_from_dataset(pred)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    gts = dataio.ground_truths_from_dataset(gt)
    result = evaluate(
        dets,
        gts,
        mode=args.mode,
        symmetric_categories=symmetric,
        nms_iou=args.nms_iou,
        score_floor=args.score_thresh,
        max_per_image=args.max_dets,
    )
    counts = {"tp": 0, "fp": 0, "neutral": 0}
    for _, kind, _ in result.match_log:
        counts[kind] += 1
    doc = {
        "config": _config_echo(args),
        "mode": result.mode,
        "overall_ap": result.overall_ap,
        "per_category_ap": result.per_category_ap,
        "ap_by_depth": result.ap_by_depth,
        "ap_by_frequency": result.ap_by_frequency,
        "mate": result.mate,
        "mase": result.mase,
        "maoe": result.maoe,
        "ods": result.ods_score,
        "match_counts": counts,
        "flags": list(result.flags),
    }
    dataio.atomic_write_text(args.output, dataio.canonical_json(doc))

    lines = [f"mode {result.mode}"]
    lines.append(f"{'category':<32}{'AP':>8}")
    for c in sorted(result.per_category_ap):
        lines.append(f"{c:<32}{result.per_category_ap[c]:>8.4f}")
    lines.append(
        f"overall AP {result.overall_ap:.4f} | mATE {result.mate:.4f} "
        f"mASE {result.mase:.4f} mAOE {result.maoe:.4f} | ODS {result.ods_score:.4f}"
    )
    band = " ".join(f"{k} {v:.4f}" for k, v in sorted(result.ap_by_depth.items()))
    freq = " ".join(f"{k} {v:.4f}" for k, v in sorted(result.ap_by_frequency.items()))
    if band:
        lines.append("AP by depth: " + band)
    if freq:
        lines.append("AP by frequency: " + freq)
    table = "\n".join(lines) + "\n"
    if args.table:
        dataio.atomic_write_text(args.table, table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------
# lift
# ---------------------------------------------------------------------------


def _lift_one(ann, image, cloud, depth_map, instances, size_specs, args):
    mask = instances == ann.instance
    camera = image.camera
    candidate = lift_annotation(
        cloud,
        mask,
        ann.box2d_obj(),
        camera,
        config=OptimizerConfig(grid_size=args.grid_size),
        seed=args.seed,
    )
    record = {
        "annotation_id": ann.id,
        "image_id": ann.image_id,
        "category": ann.category,
        "generator": candidate.generator,
        "status": candidate.status,
        "center": list(candidate.box.center),
        "dims": list(candidate.box.dims),
        "quaternion": list(candidate.box.quaternion),
        "losses": candidate.losses,
        "measurements": candidate.measurements,
    }
    occ = occlusion_ratio(candidate.box, depth_map, camera, seed=args.seed)
    verdicts = [
        geometric_filter(candidate, ann.box2d_obj(), camera, (image.width, image.height), occlusion=occ)
    ]
    spec = size_specs.get(ann.category) if size_specs else None
    verdicts.append(size_filter(candidate, spec, args.dataset_class))
    verdicts.append(ratio_filters(candidate, spec))
    failed = [rule for v in verdicts for rule in v.failed_rules]
    flags = [flag for v in verdicts for flag in v.flags]
    record["filter"] = {
        "passed": not failed,
        "failed_rules": sorted(failed),
        "flags": sorted(set(flags)),
    }
    record["ignore3d"] = bool(failed)
    return record


def _cmd_lift(args) -> int:
    ds = _read_dataset(args.dataset)
    size_specs = None
    if args.size_spec:
        if not os.path.exists(args.size_spec):
            raise InputError(f"no such file: {args.size_spec}")
        size_specs = dataio.read_size_specs(args.size_spec)
    images = ds.image_by_id()
    records = []
    for image in sorted(ds.images, key=lambda im: im.id):
        anns = [a for a in ds.annotations if a.image_id == image.id and a.instance is not None]
        if not anns:
            continue
        if image.depth_path is None:
            raise InputError(f"image {image.id!r} has no depth_path")
        depth_file = os.path.join(args.depth_dir, image.depth_path)
        inst_file = os.path.join(args.masks_dir, f"{image.id}.wd3i")
        if not os.path.exists(depth_file):
            raise InputError(f"no such depth file: {depth_file}")
        if not os.path.exists(inst_file):
            raise InputError(f"no such instance map: {inst_file}")
        depth = dataio.read_depth(depth_file)
        instances = dataio.read_instance_map(inst_file)
        cloud = dataio.cloud_from_depth(depth, image.camera)
        for ann in sorted(anns, key=lambda a: a.id):
            try:
                records.append(_lift_one(ann, images[ann.image_id], cloud, depth, instances, size_specs, args))
            except ValueError as exc:
                records.append(
                    {
                        "annotation_id": ann.id,
                        "image_id": ann.image_id,
                        "category": ann.category,
                        "status": "failed",
                        "error": str(exc),
                        "ignore3d": True,
                    }
                )
    doc = {"config": _config_echo(args), "candidates": records}
    dataio.atomic_write_text(args.output, dataio.canonical_json(doc))
    n_ok = sum(1 for r in records if r.get("status") == "optimized")
    sys.stdout.write(f"lifted {n_ok}/{len(records)} annotations -> {args.output}\n")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _scene_files(scene: SynthScene, out_dir: str):
    depth_name = f"{scene.image.id}.wd3d"
    dataio.write_depth(os.path.join(out_dir, depth_name), scene.depth)
    dataio.write_instance_map(os.path.join(out_dir, f"{scene.image.id}.wd3i"), scene.instance_map)
    scene.image.depth_path = depth_name


def _cmd_synth(args) -> int:
    camera = CameraModel(args.fx, args.fy, args.cx, args.cy, args.width, args.height)
    spec = SynthSpec(
        n_boxes=args.boxes,
        noise_sigma=args.noise_sigma,
        floor_y=None if args.no_floor else args.floor_y,
        categories=tuple(args.categories.split(",")),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    ds = dataio.DatasetFile()
    for k in range(args.scenes):
        scene = synth_scene(spec, camera, seed=args.seed + k, image_id=f"synth-{args.seed + k:06d}")
        _scene_files(scene, args.out_dir)
        ds.images.append(scene.image)
        ds.annotations.extend(scene.annotations)
    dataio.write_dataset(ds, os.path.join(args.out_dir, "dataset.json"))
    meta = {"config": _config_echo(args), "images": [im.id for im in ds.images]}
    dataio.atomic_write_text(os.path.join(args.out_dir, "synth-config.json"), dataio.canonical_json(meta))
    sys.stdout.write(f"wrote {args.scenes} scene(s) to {args.out_dir}\n")
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def _cmd_sample(args) -> int:
    ds = _read_dataset(args.dataset)
    try:
        result = sample_eval_split(ds, SamplerTargets(), size=args.size, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    doc = {
        "config": _config_echo(args),
        "image_ids": result.image_ids,
        "rare_categories": list(result.rare_categories),
        "depth_proportions": result.depth_proportions,
        "source_proportions": result.source_proportions,
        "phase_sizes": list(result.phase_sizes),
    }
    if args.output:
        dataio.atomic_write_text(args.output, dataio.canonical_json(doc))
    sys.stdout.write(f"selected {len(result.image_ids)} images: {' '.join(result.image_ids[:10])}")
    if len(result.image_ids) > 10:
        sys.stdout.write(" ...")
    sys.stdout.write("\n")
    if result.rare_categories:
        sys.stdout.write("rare categories: " + " ".join(result.rare_categories) + "\n")
    return 0


# ---------------------------------------------------------------------------
# iou
# ---------------------------------------------------------------------------


def _parse_box(values) -> Box3D:
    v = [float(x) for x in values]
    return Box3D(np.array(v[0:3]), np.array(v[3:6]), np.array(v[6:10]))


def _cmd_iou(args) -> int:
    try:
        a = _parse_box(args.box_a)
        b = _parse_box(args.box_b)
    except ValueError as exc:
        raise InputError(f"bad box: {exc}") from exc
    exact = iou3d(a, b)
    mc = iou3d_monte_carlo(a, b, n_samples=args.mc_samples, seed=args.seed)
    sys.stdout.write(f"exact {exact:.6f}, mc {mc:.3f} (n={args.mc_samples})\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mono3dkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="run the 3D detection benchmark")
    p.add_argument("gt", help="ground-truth dataset file")
    p.add_argument("pred", help="prediction dataset file (annotations carry s2d/s3d)")
    p.add_argument("--mode", choices=("iou", "dist"), default="iou")
    p.add_argument("--nms-iou", type=float, default=0.6)
    p.add_argument("--score-thresh", type=float, default=0.05)
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--symmetric-categories", default=None, help="file with one category per line")
    p.add_argument("--output", default="eval-result.json")
    p.add_argument("--table", default=None, help="also write the text table here")
    _add_threads(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("lift", help="lift 2D annotations to 3D boxes")
    p.add_argument("dataset", help="dataset file with instance ids and depth paths")
    p.add_argument("--depth-dir", required=True)
    p.add_argument("--masks-dir", required=True)
    p.add_argument("--output", default="candidates.json")
    p.add_argument("--size-spec", default=None)
    p.add_argument("--dataset-class", choices=("standard", "fine_grained"), default="standard")
    p.add_argument("--grid-size", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_threads(p)
    p.set_defaults(func=_cmd_lift)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--boxes", type=int, default=3)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="synth-out")
    p.add_argument("--width", type=int, default=960)
    p.add_argument("--height", type=int, default=720)
    p.add_argument("--fx", type=float, default=450.0)
    p.add_argument("--fy", type=float, default=450.0)
    p.add_argument("--cx", type=float, default=480.0)
    p.add_argument("--cy", type=float, default=360.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--floor-y", type=float, default=1.2)
    p.add_argument("--no-floor", action="store_true")
    p.add_argument("--categories", default="block")
    _add_threads(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("sample", help="select a balanced evaluation split")
    p.add_argument("dataset")
    p.add_argument("--size", type=int, default=0, help="phase-2 target image count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    _add_threads(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("iou", help="exact and Monte-Carlo IoU of two boxes")
    p.add_argument("--box-a", nargs=10, required=True, metavar="V", help="cx cy cz w h l qw qx qy qz")
    p.add_argument("--box-b", nargs=10, required=True, metavar="V")
    p.add_argument("--mc-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    _add_threads(p)
    p.set_defaults(func=_cmd_iou)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads < 1:
        sys.stderr.write("error: --threads must be at least 1\n")
        return 2
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except Exception as exc:  # pragma: no cover - internal failure path
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
