"""Command-line interface: downsample, baseline, eval, bake, render, report.

Exit codes: 0 success, 2 usage/config error, 3 unreadable or malformed
input, 4 training aborted on a non-finite loss.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .bake import bake_geometry_features, build_uv_raster
from .exceptions import ConfigError, FormatError, MeshError, NumericAbort, ParseError, ShapeError
from .io import read_texture, write_png
from .losses import memory_metric
from .mesh import compute_normals, load_obj, normalize
from .model import VARIANTS
from .render import CameraPose, PoseRange, RenderConfig, render, sample_poses
from .trainer import PROFILES, TrainConfig, evaluate_baseline, export_baseline, export_run, train

PROFILE_ENV = "GEOSCALER_PROFILE"
CLASSICAL = ("bicubic", "lanczos")
EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST_KEYS = ("mesh", "texture", "scale", "variant", "profile", "seed", "out", "iterations")

logger = logging.getLogger("texdown")


class UsageError(ConfigError):
    pass


def _scale(text) -> int:
    try:
        s = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid scale {text!r}") from None
    if s < 1 or s & (s - 1):
        raise argparse.ArgumentTypeError(f"scale must be a power of two, got {s}")
    return s


def _existing(path, what) -> Path:
    p = Path(path).expanduser().resolve()
    if not p.is_file():
        raise FormatError(f"{what} not found: {p}")
    if not os.access(p, os.R_OK):
        raise FormatError(f"{what} is not readable: {p}")
    return p


def _load_texture(path) -> np.ndarray:
    return read_texture(path).transpose(2, 0, 1)


def _default_profile() -> str:
    profile = os.environ.get(PROFILE_ENV, "desk")
    if profile not in PROFILES:
        raise UsageError(f"{PROFILE_ENV}={profile!r} is not one of {sorted(PROFILES)}")
    return profile


# --------------------------------------------------------------------------
# downsample / baseline
# --------------------------------------------------------------------------

def _apply_config_file(args) -> dict:
    """Merge ``--config`` JSON into ``args``; return leftover TrainConfig overrides."""
    if not args.config:
        return {}
    path = _existing(args.config, "config file")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    overrides = {}
    for key, value in doc.items():
        if key in MANIFEST_KEYS:
            setattr(args, key, value)
        elif key in train_fields:
            overrides[key] = value
        else:
            raise UsageError(f"{path}: unknown config field {key!r}")
    return overrides


def _manifest(args) -> dict:
    overrides = _apply_config_file(args)
    if args.mesh is None or args.texture is None or args.out is None:
        raise UsageError("--mesh, --texture and --out are required")
    try:
        scale = _scale(args.scale)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None
    variant = args.variant
    if variant not in VARIANTS and variant not in CLASSICAL:
        raise UsageError(f"unknown variant {variant!r}")
    profile = args.profile or _default_profile()
    if profile not in PROFILES:
        raise UsageError(f"unknown profile {profile!r}")
    if args.iterations is not None:
        overrides.setdefault("iterations", int(args.iterations))
        overrides.setdefault("warmup", min(PROFILES[profile]["warmup"], int(args.iterations) // 10))
    overrides.update(scale=scale, seed=int(args.seed))
    return {
        "mesh": _existing(args.mesh, "mesh"),
        "texture": _existing(args.texture, "texture"),
        "out": Path(args.out).expanduser().resolve(),
        "variant": variant,
        "config": TrainConfig.from_profile(profile, **overrides),
    }


def cmd_downsample(args) -> int:
    m = _manifest(args)
    mesh = load_obj(m["mesh"])
    texture = _load_texture(m["texture"])
    config, out = m["config"], m["out"]
    if m["variant"] in CLASSICAL:
        result = evaluate_baseline(mesh, texture, config.scale, m["variant"], config)
        export_baseline(result, mesh, out)
        report = result.report
    else:
        try:
            result = train(mesh, texture, config, variant=m["variant"])
        except NumericAbort as exc:
            out.mkdir(parents=True, exist_ok=True)
            diag = {"error": str(exc), **exc.diagnostic}
            (out / "abort.json").write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
            raise
        export_run(result, mesh, out)
        report = result.best_report
    print(f"{m['variant']} x{config.scale}: psnr {report.psnr:.3f} dB, ssim {report.ssim:.4f} -> {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    args.variant = args.kernel
    args.iterations = None
    return cmd_downsample(args)


# --------------------------------------------------------------------------
# eval / report
# --------------------------------------------------------------------------

def _load_report(path) -> dict:
    p = Path(path).expanduser().resolve()
    if p.is_dir():
        p = p / "report.json"
    p = _existing(p, "report")
    try:
        rep = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON ({exc.msg})", exc.lineno) from None
    for key in ("pose_hash", "best", "texture", "variant"):
        if key not in rep:
            raise FormatError(f"{p}: missing field {key!r}")
    rep["_path"] = str(p.parent)
    return rep


def compare_reports(reports) -> list:
    """Rows of the comparison table; deltas are relative to the first report."""
    hashes = {r["pose_hash"] for r in reports}
    if len(hashes) > 1:
        raise UsageError("runs were validated on different pose fixtures (pose hash mismatch); "
                         "re-run them with the same q_poses and pose range")
    ref = reports[0]["best"]
    rows = []
    for r in reports:
        h, w = r["texture"]["downsampled"]
        oh, ow = r["texture"]["original"]
        mem = memory_metric(h, w)
        rows.append({
            "run": r["_path"], "variant": r["variant"], "scale": r.get("scale"),
            "psnr": r["best"]["psnr"], "ssim": r["best"]["ssim"],
            "memory_bytes": mem, "memory_ratio": mem / memory_metric(oh, ow),
            "delta_psnr": r["best"]["psnr"] - ref["psnr"], "delta_ssim": r["best"]["ssim"] - ref["ssim"],
        })
    return rows


def _table(rows) -> str:
    lines = [f"{'variant':<10} {'scale':>5} {'psnr':>8} {'ssim':>7} {'memory':>12} {'ratio':>8} "
             f"{'dpsnr':>8} {'dssim':>8}  run"]
    for r in rows:
        lines.append(f"{r['variant']:<10} {r['scale']!s:>5} {r['psnr']:8.3f} {r['ssim']:7.4f} "
                     f"{r['memory_bytes']:12.0f} {r['memory_ratio']:8.4f} {r['delta_psnr']:+8.3f} "
                     f"{r['delta_ssim']:+8.4f}  {r['run']}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    rows = compare_reports([_load_report(p) for p in args.runs])
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = _table(rows)
    if args.out:
        out = Path(args.out).expanduser().resolve()
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(buf.getvalue())
        (out / "comparison.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_report(args) -> int:
    for path in args.runs:
        r = _load_report(path)
        best = r["best"]
        h, w = r["texture"]["downsampled"]
        print(f"{r['_path']}: {r['variant']} x{r.get('scale')} ({r.get('profile')}, seed {r.get('seed')}) "
              f"best@{r.get('best_iteration')} psnr {best['psnr']:.3f} ssim {best['ssim']:.4f} "
              f"texture {h}x{w} memory {memory_metric(h, w):.0f} B")
        if args.history:
            for v in r.get("validation", []):
                print(f"  iter {v['iteration']:>6}: psnr {v['psnr']:.3f} ssim {v['ssim']:.4f} loss {v['loss']:.5f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# bake / render
# --------------------------------------------------------------------------

def _size(text) -> tuple:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"invalid size {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise UsageError(f"invalid size {text!r}")
    return dims


def cmd_bake(args) -> int:
    mesh_path = _existing(args.mesh, "mesh")
    if args.texture:
        h, w = read_texture(_existing(args.texture, "texture")).shape[:2]
    elif args.size:
        h, w = _size(args.size)
    else:
        raise UsageError("give --size or --texture")
    out = Path(args.out).expanduser().resolve()
    mesh = compute_normals(normalize(load_obj(mesh_path)))
    raster = build_uv_raster(mesh, (h, w))
    feats = bake_geometry_features(mesh, raster)
    mask = feats[6:7]
    out.mkdir(parents=True, exist_ok=True)
    write_png((feats[0:3] + 1) / 2 * mask, out / "positions.png")
    write_png((feats[3:6] + 1) / 2 * mask, out / "normals.png")
    write_png(np.repeat(mask, 3, axis=0), out / "mask.png")
    covered = int(mask.sum())
    print(f"coverage fraction: {raster.covered_fraction:.6f} ({covered}/{h * w} texels)")
    return EXIT_OK


def pose_grid(prange: PoseRange, n_az: int, n_el: int) -> list:
    """``n_az x n_el`` lattice at cell midpoints, distance at the range midpoint."""
    dist = 0.5 * (prange.distance[0] + prange.distance[1])
    poses = []
    for i in range(n_az):
        az = prange.azimuth[0] + (i + 0.5) / n_az * (prange.azimuth[1] - prange.azimuth[0])
        for j in range(n_el):
            el = prange.elevation[0] + (j + 0.5) / n_el * (prange.elevation[1] - prange.elevation[0])
            poses.append(CameraPose(az, el, dist, fov=prange.fov))
    return poses


def cmd_render(args) -> int:
    mesh_path = _existing(args.mesh, "mesh")
    tex_path = _existing(args.texture, "texture")
    out = Path(args.out).expanduser().resolve()
    profile = args.profile or _default_profile()
    resolution = args.resolution or PROFILES[profile]["render"]["resolution"]
    prange = PoseRange()
    if args.grid:
        n_az, n_el = _size(args.grid)
        poses = pose_grid(prange, n_az, n_el)
    elif args.random:
        poses = sample_poses(prange, args.random, args.seed)
    elif args.azimuth is not None:
        dist = args.distance if args.distance is not None else sum(prange.distance) / 2
        poses = [CameraPose(args.azimuth, args.elevation or 0.0, dist, fov=prange.fov)]
    else:
        raise UsageError("give --grid, --random or --azimuth")
    mesh = compute_normals(normalize(load_obj(mesh_path)))
    texture = torch.as_tensor(_load_texture(tex_path), dtype=torch.float32)
    cfg = RenderConfig(resolution=resolution)
    uvs = torch.as_tensor(mesh.uvs, dtype=torch.float32)
    out.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        for k, pose in enumerate(poses):
            img = render(mesh, texture, uvs, pose, cfg, radius=1.0)
            write_png(img, out / f"{args.prefix}_{k:02d}.png")
    (out / f"{args.prefix}_poses.json").write_text(
        json.dumps([p.as_dict() for p in poses], indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(poses)} views to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texdown", description="Geometry-aware texture downsampling.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, variant=True):
        p.add_argument("--mesh", help="input OBJ with texture coordinates")
        p.add_argument("--texture", help="input PNG texture")
        p.add_argument("--scale", type=_scale, default=4, help="downsampling factor (power of two)")
        p.add_argument("--profile", choices=sorted(PROFILES), default=None,
                       help=f"training preset (default: ${PROFILE_ENV} or desk)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory")
        p.add_argument("--config", help="JSON file overriding flags and training fields")
        if variant:
            p.add_argument("--variant", default="full", choices=list(VARIANTS) + list(CLASSICAL))
            p.add_argument("--iterations", type=int, default=None, help="override the profile's iteration count")

    p = sub.add_parser("downsample", help="learn or compute a downsampled texture")
    run_args(p)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("baseline", help="classical bicubic/Lanczos downsampling under the same protocol")
    run_args(p, variant=False)
    p.add_argument("--kernel", choices=CLASSICAL, default="bicubic")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="compare run directories on the shared pose fixture")
    p.add_argument("runs", nargs="+", help="run directories or report.json files")
    p.add_argument("--out", help="directory for comparison.csv / comparison.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bake", help="write baked position/normal/mask maps")
    p.add_argument("--mesh", required=True)
    p.add_argument("--size", help="texture size, N or HxW")
    p.add_argument("--texture", help="take the size from this PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("render", help="render views of a textured mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--texture", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="azimuth x elevation lattice, e.g. 3x3")
    p.add_argument("--random", type=int, help="number of random poses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--azimuth", type=float)
    p.add_argument("--elevation", type=float)
    p.add_argument("--distance", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--profile", choices=sorted(PROFILES), default=None)
    p.add_argument("--prefix", default="view")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="summarise run reports")
    p.add_argument("runs", nargs="+")
    p.add_argument("--history", action="store_true", help="also list every validation")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ParseError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, ShapeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
