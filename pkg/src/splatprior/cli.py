"""``splatprior`` command-line driver.

Every subcommand prints one JSON object (``"schema": 1``, sorted keys) on
stdout. Exit status is 0 on success, 1 for invalid input and 2 when a
numerical failure stops the run.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import io
from .config import Config, load_config
from .core import Camera, InvalidInputError, NumericalError, SplatMode, SplatScene
from .geomeval import (
    depth_metrics,
    frustum_crop,
    interpolate_pose,
    mesh_metrics,
    reconstruct_mesh_pipeline,
    sim3_icp,
)
from .geomeval.mesh import sample_surface
from .optim import LOSSES, fit_scene, gradient_check, render_targets
from .pose import EstimationFailedError, pose_auc, pose_errors, relative_pose_from_scene
from .raster import render_views
from .scenes import (
    analytic_mesh,
    analytic_render,
    default_intrinsics,
    make_camera_pair,
    make_two_plane_room,
    random_depth_init,
    random_splat_scene,
    splats_from_analytic,
)

SCHEMA = 1
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _emit(report: dict) -> None:
    sys.stdout.write(json.dumps({"schema": SCHEMA, **report}, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------
# fixtures


def _fixture_cameras(cfg: Config):
    sc = make_two_plane_room(cfg.seed)
    K = default_intrinsics(cfg.scene.width, cfg.scene.height)
    c1, c2, _ = make_camera_pair(sc, cfg.scene.baseline_frac, cfg.scene.rot_deg, cfg.seed, K)
    return sc, [c1, c2]


def _training_cameras(source_cams: Sequence[Camera]) -> list[Camera]:
    """Source views plus the midpoint between the first two."""
    a, b = source_cams[0], source_cams[1]
    return list(source_cams) + [a.with_pose(interpolate_pose(a.pose, b.pose, 0.5))]


def cmd_gen_scene(args, cfg: Config) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = SplatMode(cfg.scene.mode)
    sc, cams = _fixture_cameras(cfg)
    gt = SplatScene([splats_from_analytic(sc, c, mode, cfg.scene.footprint_scale) for c in cams], mode)
    ic = cfg.init
    init = random_depth_init(sc, cams, cfg.seed, scale_range=ic.scale_range, smooth=ic.smooth,
                             corr_px=ic.corr_px, noise=ic.noise, mode=mode)
    io.write_json(io.analytic_to_dict(sc), out / "analytic.json")
    io.write_cameras(cams, out / "cameras.json")
    io.save_scene(gt, out / "gt")
    io.save_scene(init, out / "init")
    for i, cam in enumerate(cams):
        ar = analytic_render(sc, cam)
        io.write_ppm(out / f"view_{i:03d}.ppm", ar.color)
        io.write_pfm(out / f"view_{i:03d}_depth.pfm", np.where(ar.hit, ar.depth, 0.0))
    return {
        "command": "gen-scene",
        "seed": cfg.seed,
        "mode": mode.value,
        "frames": len(cams),
        "width": cfg.scene.width,
        "height": cfg.scene.height,
        "gt_checksum": gt.checksum(),
        "init_checksum": init.checksum(),
        "radius": sc.radius,
    }


def cmd_render(args, cfg: Config) -> dict:
    scene = io.load_scene(args.scene)
    cams = io.read_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    views = []
    for i, buf in enumerate(render_views(scene, cams, cfg.render)):
        io.write_ppm(out / f"render_{i:03d}.ppm", buf.color)
        depth = buf.depth_exp if cfg.render.depth == "expected" else buf.depth_acc
        io.write_pfm(out / f"render_{i:03d}_depth.pfm", depth)
        valid = np.isfinite(buf.depth_exp)
        views.append({
            "index": i,
            "coverage": float(valid.mean()),
            "mean_color": [float(c) for c in buf.color.reshape(-1, 3).mean(0)],
            "mean_depth": float(np.nanmean(depth)) if valid.any() else None,
        })
    return {"command": "render", "views": views}


def cmd_fit(args, cfg: Config) -> dict:
    src = Path(args.data)
    sc = io.analytic_from_dict(json.loads((src / "analytic.json").read_text()))
    source_cams = io.read_cameras(src / "cameras.json")
    init = io.load_scene(src / args.init)
    cams = _training_cameras(source_cams)
    fit_cfg = cfg.fit_config()
    if args.iterations is not None:
        fit_cfg = dataclasses.replace(fit_cfg, iterations=args.iterations)
    if fit_cfg.scene_radius is None:
        fit_cfg = dataclasses.replace(fit_cfg, scene_radius=sc.radius)
    if args.targets == "analytic":
        targets = [analytic_render(sc, c).color for c in cams]
    else:
        targets = render_targets(io.load_scene(src / "gt"), cams, fit_cfg)
    result = fit_scene(init, cams, targets, fit_cfg)
    out = Path(args.out)
    io.save_scene(result.scene, out)
    result.write_trace(out / "trace.csv")
    first, last = result.trace[0], result.trace[-1]
    return {
        "command": "fit",
        "iterations": fit_cfg.iterations,
        "initial": {k: v for k, v in first.items() if k != "iteration"},
        "final": {k: v for k, v in last.items() if k != "iteration"},
        "checksum": result.scene.checksum(),
    }


def cmd_eval_pose(args, cfg: Config) -> dict:
    scene = io.load_scene(args.scene)
    if args.gt_cameras:
        gt_poses = [c.pose for c in io.read_cameras(args.gt_cameras)]
    else:
        gt_poses = [f.gt_pose for f in scene.frames]
    if len(gt_poses) != len(scene.frames) or any(p is None for p in gt_poses):
        raise InvalidInputError("need a ground-truth pose for every frame")
    ref_inv = gt_poses[0].inverse()
    pairs, errors = [], []
    for t in range(1, len(scene.frames)):
        pred = relative_pose_from_scene(scene, t, method=args.method, ransac=cfg.ransac_config())
        gt_rel = gt_poses[t].compose(ref_inv)
        err = pose_errors(pred, gt_rel)
        errors.append(err)
        pairs.append({"frame": t, "rot_deg": err.rot_deg, "trans_deg": err.trans_deg})
    auc = pose_auc(errors, args.thresholds)
    return {"command": "eval-pose", "method": args.method, "pairs": pairs, "auc": auc.as_dict()}


def cmd_eval_depth(args, cfg: Config) -> dict:
    pred, gt = io.read_pfm(args.pred), io.read_pfm(args.gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"depth maps differ in shape: {pred.shape} vs {gt.shape}")
    return {"command": "eval-depth", **depth_metrics(pred, gt, align_scale=args.align_scale).as_dict()}


def cmd_fuse_mesh(args, cfg: Config) -> dict:
    scene = io.load_scene(args.scene)
    cams = io.read_cameras(args.cameras)
    if len(cams) < 2:
        raise InvalidInputError("fusion needs two source cameras to interpolate between")
    m = cfg.mesh
    n_views = args.views if args.views is not None else m.n_views
    mesh = reconstruct_mesh_pipeline(scene, cams, n_views=n_views, voxel_size=m.voxel_size,
                                     trunc_voxels=m.trunc_voxels, depth=cfg.render.depth,
                                     render_cfg=cfg.render)
    io.write_mesh_ply(mesh, args.out)
    return {
        "command": "fuse-mesh",
        "views": n_views,
        "vertices": int(len(mesh.vertices)),
        "triangles": int(len(mesh.triangles)),
        "area": float(mesh.areas().sum()),
    }


def cmd_eval_mesh(args, cfg: Config) -> dict:
    pred = io.read_mesh_ply(args.pred)
    if args.gt_analytic:
        sc = io.analytic_from_dict(json.loads(Path(args.gt_analytic).read_text()))
        gt = analytic_mesh(sc, args.spacing)
    else:
        gt = io.read_mesh_ply(args.gt)
    if args.crop_cameras:
        cams = io.read_cameras(args.crop_cameras)
        gt = frustum_crop(gt, cams)
    report = {"command": "eval-mesh", "icp": bool(cfg.mesh.icp)}
    if cfg.mesh.icp:
        src = sample_surface(pred, 4096, seed=cfg.seed)
        dst = sample_surface(gt, 4096, seed=cfg.seed + 1)
        sim = sim3_icp(src, dst, iters=cfg.mesh.icp_iters)
        pred = dataclasses.replace(pred, vertices=sim.apply(pred.vertices))
        report["sim3_scale"] = float(sim.scale)
    metrics = mesh_metrics(pred, gt, samples=cfg.mesh.samples, seed=cfg.seed)
    return {**report, **metrics.as_dict()}


def cmd_gradcheck(args, cfg: Config) -> dict:
    mode = SplatMode(args.mode)
    scene, cams = random_splat_scene(grid=args.grid, seed=cfg.seed, mode=mode, frames=args.frames,
                                     image_size=args.image_size, planar=args.loss in ("orient", "rnc"))
    rng = np.random.default_rng(cfg.seed)
    targets = [rng.uniform(0.0, 1.0, (c.intrinsics.height, c.intrinsics.width, 3)) for c in cams]
    per_class = gradient_check(args.loss, scene, cams, targets, cfg.priors, seed=cfg.seed)
    worst = max(per_class.values())
    return {
        "command": "gradcheck",
        "loss": args.loss,
        "seed": cfg.seed,
        "per_class": per_class,
        "max_rel_error": worst,
        "passed": bool(worst < args.tolerance),
    }


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; unknown keys are rejected")
    common.add_argument("--seed", type=int, help="overrides the config and SPLATPRIOR_SEED")
    common.add_argument("--threads", type=int, default=1, help="worker threads for the compositing kernel")

    parser = _Parser(prog="splatprior", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-scene", parents=[common], help="write the two-plane fixture")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("render", parents=[common], help="render a splat scene into cameras")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("fit", parents=[common], help="fit splats to the fixture's analytic views")
    p.add_argument("--data", required=True, help="directory written by gen-scene")
    p.add_argument("--init", default="init", help="scene subdirectory to start from (init or gt)")
    p.add_argument("--targets", choices=("analytic", "rendered"), default="analytic",
                   help="ray-traced views, or renders of the ground-truth splats")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval-pose", parents=[common], help="relative pose from splat means")
    p.add_argument("--scene", required=True)
    p.add_argument("--gt-cameras", help="defaults to the poses stored with the scene")
    p.add_argument("--method", choices=("ls", "ransac"), default="ls")
    p.add_argument("--thresholds", type=float, nargs="+", default=[5.0, 10.0, 20.0])
    p.set_defaults(func=cmd_eval_pose)

    p = sub.add_parser("eval-depth", parents=[common], help="compare two PFM depth maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align-scale", action="store_true")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("fuse-mesh", parents=[common], help="TSDF-fuse rendered depth into a mesh")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--views", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse_mesh)

    p = sub.add_parser("eval-mesh", parents=[common], help="accuracy, completeness and Chamfer")
    p.add_argument("--pred", required=True)
    gt = p.add_mutually_exclusive_group(required=True)
    gt.add_argument("--gt")
    gt.add_argument("--gt-analytic", help="analytic.json written by gen-scene")
    p.add_argument("--spacing", type=float, default=0.02)
    p.add_argument("--crop-cameras", help="crop the reference to these cameras' frusta")
    p.set_defaults(func=cmd_eval_mesh)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--loss", choices=LOSSES, default="total")
    p.add_argument("--mode", choices=[m.value for m in SplatMode], default="3dgs")
    p.add_argument("--grid", type=int, default=3)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--image-size", type=int, default=8)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.threads < 1:
        print("splatprior: error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config, args.seed)
        cfg = dataclasses.replace(cfg, render=dataclasses.replace(cfg.render, num_threads=args.threads))
        # torch reductions are only reproducible at a fixed thread count
        torch.set_num_threads(1)
        _emit(args.func(args, cfg))
    except (InvalidInputError, OSError, json.JSONDecodeError) as exc:
        print(f"splatprior: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, EstimationFailedError, FloatingPointError) as exc:
        print(f"splatprior: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
