"""``primscene`` command line.

Numeric results go to stdout as JSON, a readable summary goes to stderr.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import parse_triple
from .categories import CATEGORY_CODES, LABELS
from .detection import ap3d_mean
from .diffusion import (
    analytic_gaussian_denoiser,
    build_mask,
    external_denoiser,
    linear_beta_schedule,
    load_latent,
    outpaint,
    repaint_inpaint,
    save_latent,
)
from .exceptions import ConfigError, PrimSceneError
from .generative import (
    feature_moments,
    frechet_distance,
    load_features,
    load_moments,
    precision_recall,
    save_features,
    semantic_histograms,
)
from .matching import load_weight_table, object_loss
from .mesh import export_mesh, scene_mesh
from .raster import (
    rasterize_ground,
    render_semantic_map,
    save_raster,
    save_semantic_map,
)
from .scene import (
    Rotate,
    Scale,
    Translate,
    apply_edit,
    load_layout,
    pad_layout,
    save_layout,
    threshold_existence,
)
from .synth import DEFAULT_COUNTS, synth_scene
from .voxel import VoxelSpec, iou, memory_footprint, primscene_breakdown, save_voxels, voxelize

THREADS_ENV = "PRIMSCENE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(result):
    print(json.dumps(result, indent=1, sort_keys=True))
    for key, value in result.items():
        if isinstance(value, float):
            value = f"{value:.4f}"
        elif isinstance(value, (dict, list)):
            value = json.dumps(value)
        print(f"{key:>16}: {value}", file=sys.stderr)


def _layout_paths(path):
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        if not files:
            raise ConfigError(f"{p} contains no layout files")
        return files
    return [p]


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _voxel_spec(args):
    nx, ny, nz = parse_triple(args.dims, int, "--dims")
    return VoxelSpec(nx, ny, nz, args.res)


def _denoiser(args):
    if args.endpoint:
        return external_denoiser(args.endpoint, timeout=args.timeout)
    return analytic_gaussian_denoiser(args.mu0, args.var0, linear_beta_schedule())


# -- commands ---------------------------------------------------------------------

def cmd_synth(args):
    counts = dict(DEFAULT_COUNTS)
    for item in args.counts or []:
        code, _, n = item.partition("=")
        if code not in CATEGORY_CODES or not n.isdigit():
            raise UsageError(f"--count expects CODE=N, got {item!r}")
        counts[code] = int(n)
    out = Path(args.out)
    if args.n == 1:
        layout = synth_scene(args.seed, counts)
        save_layout(layout, out)
        written = [str(out)]
        n_prims = len(layout.primitives)
    else:
        out.mkdir(parents=True, exist_ok=True)
        children = np.random.SeedSequence(args.seed).spawn(args.n)
        written, n_prims = [], 0
        for i, child in enumerate(children):
            layout = synth_scene(int(child.generate_state(1)[0]), counts, pose_id=f"{args.seed}-{i}")
            path = out / f"layout_{i:05d}.json"
            save_layout(layout, path)
            written.append(str(path))
            n_prims += len(layout.primitives)
    return {"files": written, "n_primitives": n_prims}


def cmd_rasterize(args):
    raster = rasterize_ground(load_layout(args.layout))
    save_raster(raster, args.out)
    return {"out": args.out, "occupied": raster.B.sum(axis=(0, 1)).astype(int).tolist()}


def cmd_voxelize(args):
    grid = voxelize(load_layout(args.layout), _voxel_spec(args))
    save_voxels(grid, args.out)
    return {"out": args.out, "dims": list(grid.spec.dims), "occupied": grid.n_occupied}


def cmd_export_mesh(args):
    mesh = scene_mesh(load_layout(args.layout), segments=args.segments)
    export_mesh(mesh, args.out, args.format)
    return {"out": args.out, "vertices": mesh.n_vertices, "faces": mesh.n_faces}


def cmd_render_bev(args):
    labels = render_semantic_map(load_layout(args.layout))
    save_semantic_map(labels, args.out)
    counts = np.bincount(labels.ravel(), minlength=len(LABELS))
    return {"out": args.out, "pixels": {LABELS[i]: int(c) for i, c in enumerate(counts) if c}}


def cmd_eval_recon(args):
    gt = [load_layout(p) for p in _layout_paths(args.gt)]
    pred = [load_layout(p) for p in _layout_paths(args.pred)]
    if len(gt) != len(pred):
        raise ConfigError(f"{len(gt)} ground-truth layouts but {len(pred)} predictions")
    pred_kept = [threshold_existence(p, args.threshold) for p in pred]
    spec = _voxel_spec(args)
    scores = _map(lambda pair: iou(voxelize(pair[0], spec), voxelize(pair[1], spec), args.classes),
                  list(zip(gt, pred_kept)), args.threads)
    ap = ap3d_mean(gt, pred_kept)
    result = {
        "iou": float(np.mean([s.iou for s in scores])),
        "miou": float(np.mean([s.miou for s in scores])),
        "ap3d": ap.mean,
        "ap3d_25": ap.ap25,
        "ap3d_50": ap.ap50,
        "n_scenes": len(gt),
    }
    if args.weights:
        table = load_weight_table(args.weights)
        losses = [object_loss(pad_layout(g), pad_layout(p), table).total for g, p in zip(gt, pred)]
        result["object_loss"] = float(np.mean(losses))
    return result


def cmd_eval_gen(args):
    result = {}
    if args.real and args.gen:
        real, gen = load_features(args.real), load_features(args.gen)
        pr = precision_recall(real, gen, args.k)
        result.update(precision=pr.precision, recall=pr.recall)
        if not (args.real_moments or args.gen_moments):
            result["frechet"] = frechet_distance(*feature_moments(real), *feature_moments(gen))
    if args.real_moments and args.gen_moments:
        result["frechet"] = frechet_distance(*load_moments(args.real_moments),
                                             *load_moments(args.gen_moments))
    if not result:
        raise UsageError("give --real/--gen feature files and/or --real-moments/--gen-moments")
    return result


def _parse_edit(args):
    given = [e for e in (args.translate, args.rotate, args.scale) if e is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --translate, --rotate, --scale")
    if args.translate is not None:
        return Translate(parse_triple(args.translate, float, "--translate"))
    if args.scale is not None:
        return Scale(parse_triple(args.scale, float, "--scale"))
    axis, _, deg = args.rotate.partition(":")
    try:
        return Rotate(axis, math.radians(float(deg)))
    except ValueError as exc:
        raise UsageError("--rotate expects AXIS:DEGREES, e.g. z:90") from exc


def cmd_edit(args):
    edit = _parse_edit(args)
    layout = apply_edit(load_layout(args.layout), args.id, edit)
    save_layout(layout, args.out)
    prim = layout.primitives[layout.find(args.id)]
    return {"out": args.out, "instance_id": args.id, "center": list(prim.center),
            "cholesky": list(prim.cholesky)}


def _parse_mask(text, shape):
    kind, _, rest = text.partition(":")
    if kind == "rect":
        region = [int(v) for v in rest.split(",")] if rest else None
        return build_mask("rect", shape, region=region)
    return build_mask(kind, shape, side=rest or None)


def cmd_inpaint(args):
    z0 = load_latent(args.latent)
    mask = _parse_mask(args.mask, z0.shape)
    z = repaint_inpaint(_denoiser(args), z0, mask, args.label, steps=args.steps,
                        jump_length=args.jump, resamplings=args.resample, seed=args.seed)
    save_latent(z, args.out)
    return {"out": args.out, "masked": int(mask.sum()), "mean": float(z.mean()), "std": float(z.std())}


def cmd_outpaint(args):
    seed_latent = load_latent(args.latent)
    blocks = outpaint(_denoiser(args), seed_latent, args.direction, args.blocks, args.label,
                      steps=args.steps, seed=args.seed, jump_length=args.jump,
                      resamplings=args.resample)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, b in enumerate(blocks):
        path = out / f"block_{i:03d}_r{b.offset[0]}_c{b.offset[1]}.bin"
        save_latent(b.latent, path)
        written.append({"file": str(path), "offset": list(b.offset)})
    return {"blocks": written}


def cmd_stats(args):
    if args.repr == "voxel":
        report = memory_footprint("voxel", parse_triple(args.dims, int, "--dims"))
        extra = {}
    else:
        h, w = (int(v) for v in args.raster_dims.split(","))
        report = memory_footprint("primscene", raster_dims=(h, w), n_primitives=args.primitives)
        raster_mib, prim_mib = primscene_breakdown((h, w), args.primitives)
        extra = {"raster_mib": round(raster_mib, 2), "primitive_mib": round(prim_mib, 2)}
    return {"repr": report.name, "bytes": report.bytes, "mib": round(report.mib, 2),
            "mib_exact": report.mib, **extra}


def cmd_featurize(args):
    paths = [p for src in args.layouts for p in _layout_paths(src)]
    feats = _map(lambda p: semantic_histograms(render_semantic_map(load_layout(p)), args.blocks),
                 paths, args.threads)
    X = np.stack(feats)
    save_features(X, args.out)
    return {"out": args.out, "n": int(X.shape[0]), "d": int(X.shape[1])}


# -- parser ---------------------------------------------------------------------------

def _add_diffusion_args(p):
    p.add_argument("--latent", required=True, help="input latent file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, default=None, help="strided sampling steps (default: all)")
    p.add_argument("--jump", type=int, default=10, help="resampling jump length")
    p.add_argument("--resample", type=int, default=10, help="resamplings per jump")
    p.add_argument("--label", choices=("low", "medium", "high"), default=None)
    p.add_argument("--endpoint", help="URL of an external denoiser")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--mu0", type=float, default=0.0, help="analytic denoiser data mean")
    p.add_argument("--var0", type=float, default=1.0, help="analytic denoiser data variance")


def build_parser():
    parser = _Parser(prog="primscene", description="Primitive-based 3D scene toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=int(os.environ.get(THREADS_ENV, "1")),
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    parser.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic layouts")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="layout file, or directory when --n > 1")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--count", dest="counts", action="append", metavar="CODE=N")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rasterize", help="ground height/occupancy raster of a layout")
    p.add_argument("layout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("voxelize", help="semantic voxel grid of a layout")
    p.add_argument("layout")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default="256,256,32")
    p.add_argument("--res", type=float, default=0.25)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("export-mesh", help="triangle mesh of a layout (OBJ or PLY)")
    p.add_argument("layout")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("obj", "ply"), default=None)
    p.add_argument("--segments", type=int, default=16)
    p.set_defaults(func=cmd_export_mesh)

    p = sub.add_parser("render-bev", help="top-down semantic map (binary PGM)")
    p.add_argument("layout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_bev)

    p = sub.add_parser("eval-recon", help="IoU/mIoU and AP3D between layout sets")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--dims", default="256,256,32")
    p.add_argument("--res", type=float, default=0.25)
    p.add_argument("--threshold", type=float, default=0.3, help="existence threshold")
    p.add_argument("--classes", choices=("present", "union"), default="present")
    p.add_argument("--weights", help="loss weight table (JSON); adds the object loss")
    p.set_defaults(func=cmd_eval_recon)

    p = sub.add_parser("eval-gen", help="precision/recall and Fréchet distance")
    p.add_argument("--real")
    p.add_argument("--gen")
    p.add_argument("--real-moments")
    p.add_argument("--gen-moments")
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_eval_gen)

    p = sub.add_parser("edit", help="translate, rotate or scale one primitive")
    p.add_argument("layout")
    p.add_argument("--id", type=int, required=True, help="instance id")
    p.add_argument("--translate", metavar="DX,DY,DZ")
    p.add_argument("--rotate", metavar="AXIS:DEGREES")
    p.add_argument("--scale", metavar="SX,SY,SZ")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("inpaint", help="masked latent inpainting")
    _add_diffusion_args(p)
    p.add_argument("--mask", required=True,
                   help="half:left|right|top|bottom, channels:ground|object or rect:r0,r1,c0,c1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("outpaint", help="sliding-window latent outpainting")
    _add_diffusion_args(p)
    p.add_argument("--direction", default="right", choices=("right", "left", "up", "down", "all"))
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_outpaint)

    p = sub.add_parser("stats", help="per-sample memory of a representation")
    p.add_argument("--repr", choices=("voxel", "primscene"), required=True)
    p.add_argument("--dims", default="256,256,32")
    p.add_argument("--raster-dims", default="256,256")
    p.add_argument("--primitives", type=int, default=514)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("featurize", help="block class-histogram features of layouts")
    p.add_argument("layouts", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", type=int, default=8)
    p.set_defaults(func=cmd_featurize)
    return parser


def _apply_config(parser, argv):
    """Use values from ``--config`` as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        doc = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in sub.choices.items():
        values = {**doc.get("common", {}), **doc.get(name, {})}
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in values.items()
                           if k.replace("-", "_") in dests})
        for action in sp._actions:
            if action.dest in values or action.dest.replace("_", "-") in values:
                action.required = False


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"primscene: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        _emit(args.func(args))
    except UsageError as exc:
        parser.error(str(exc))
    except (PrimSceneError, OSError, ValueError, KeyError) as exc:
        print(f"primscene: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
