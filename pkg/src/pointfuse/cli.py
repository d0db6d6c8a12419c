"""Command-line interface.

Typical desk-scale run::

    pointfuse gen-scene --seed 7 --out scene.ply
    pointfuse gen-poses --mesh scene.ply --preset toy --out-dir poses
    pointfuse render --mesh scene.ply --poses poses --out-dir views --seed 7
    pointfuse backproject --mesh scene.ply --views views --out scene.vftr
    pointfuse train-toy --mesh scene.ply --features scene.vftr --out-dir model
    pointfuse infer --mesh scene.ply --features scene.vftr --model model --out pred.txt
    pointfuse eval --pred pred.txt --gt scene.ply

Exit status: 0 on success, 1 on usage errors, 2 on bad or inconsistent data.
"""

from __future__ import annotations

import argparse
import logging
import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backprojection import (
    backproject_views,
    finalize,
    read_fmap,
    read_vftr,
    upsample_bilinear,
    vertex_coverage,
    write_fmap,
    write_vftr,
)
from .camera import CameraView, read_intrinsics, read_pose, write_intrinsics, write_pose
from .geometry import Mesh, read_ply, save_ply
from .inference import argmax_labels, evaluate_miou, format_report, infer_scene, read_predictions, window_schedule, write_predictions
from .nn.checkpoint import load_checkpoint, load_config, save_checkpoint, save_config
from .nn.model import check_params
from .nn.train import TrainConfig, TrainingDiverged, train_toy
from .pipeline import FEATURE_MODES, mesh_point_set, plan_views, toy_model_config, toy_pose_config, training_windows
from .poses import PoseGridConfig
from .raycast import build_bvh, read_amap, render_associations, write_amap
from .sampling import SubVolumeSpec, extract_subvolume, farthest_point_sample, sample_random
from .scenegen import CLASS_NAMES, NUM_CLASSES, PlacementError, SceneRecipe, class_color, generate_scene, synth_features

log = logging.getLogger("pointfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class DataError(Exception):
    """Input files exist but are unusable together."""


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scene(args) -> int:
    recipe = SceneRecipe(
        seed=args.seed,
        room=tuple(args.room),
        room_jitter=args.jitter,
        boxes=tuple(args.boxes),
        panels=tuple(args.panels),
        grid_step=args.grid_step if args.grid_step > 0 else None,
    )
    mesh = generate_scene(recipe)
    save_ply(args.out, mesh)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return EXIT_OK


def _pose_config(args) -> PoseGridConfig:
    if args.preset == "toy":
        cfg = toy_pose_config()
    else:
        cfg = PoseGridConfig()
    kw = {}
    if args.grid:
        kw.update(grid_w=args.grid[0], grid_d=args.grid[1])
    if args.resolution:
        kw["resolution"] = tuple(args.resolution)
    if args.heights:
        kw["heights"] = tuple(args.heights)
    if args.attitudes:
        kw["attitudes"] = tuple(args.attitudes)
    if args.azimuths:
        kw["azimuths"] = tuple(args.azimuths)
    if args.threshold is not None:
        kw["context_threshold"] = args.threshold
    if args.budget is not None:
        kw["budget"] = args.budget
    if not kw:
        return cfg
    return replace(cfg, **kw)


def cmd_gen_poses(args) -> int:
    mesh = read_ply(args.mesh)
    cfg = _pose_config(args)
    plan = plan_views(mesh, cfg, args.hfov, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_intrinsics(out / "intrinsics.txt", plan.cameras[0].intrinsics)
    (out / "resolution.txt").write_text(f"{cfg.resolution[0]} {cfg.resolution[1]}\n")
    chosen = set(plan.selected)
    with open(out / "manifest.txt", "w", encoding="utf-8", newline="\n") as fh:
        for i, hf in enumerate(plan.hit_fractions):
            fh.write(f"{i} {hf:.6f} {int(i in chosen)}\n")
    for i, cam in enumerate(plan.cameras):
        write_pose(out / f"pose_{i:04d}.txt", cam.extrinsics)
    print(
        f"{len(plan.cameras)} candidates, {len(plan.kept)} pass the context filter, "
        f"{len(plan.selected)} selected"
    )
    return EXIT_OK


def read_manifest(path) -> list[tuple[int, float, bool]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 3 or tok[2] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: expected 'index hit_fraction selected(0|1)'")
            rows.append((int(tok[0]), float(tok[1]), tok[2] == "1"))
    return rows


def _load_cameras(pose_dir) -> list[CameraView]:
    """Cameras flagged as selected in the manifest, in ascending candidate index."""
    d = Path(pose_dir)
    K = read_intrinsics(d / "intrinsics.txt")
    try:
        h, w = (int(t) for t in (d / "resolution.txt").read_text().split())
    except FileNotFoundError:
        # fall back to the principal point convention cx = w / 2, cy = h / 2
        h, w = int(round(2 * K[1, 2])), int(round(2 * K[0, 2]))
    poses = [d / f"pose_{i:04d}.txt" for i, _, sel in read_manifest(d / "manifest.txt") if sel]
    if not poses:
        raise DataError(f"{d}: manifest selects no poses")
    return [CameraView(K, read_pose(p), w, h) for p in poses]


def cmd_render(args) -> int:
    mesh = read_ply(args.mesh)
    cams = _load_cameras(args.poses)
    maps = render_associations(mesh, build_bvh(mesh), cams, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r, (cam, amap) in enumerate(zip(cams, maps)):
        write_amap(out / f"view_{r:04d}.amap", amap)
        if args.feature_dim:
            feat = synth_features(mesh, cam, amap, args.feature_dim, args.noise, seed=args.seed * 100003 + r)
            write_fmap(out / f"view_{r:04d}.fmap", feat)
    print(f"rendered {len(cams)} views into {out}")
    return EXIT_OK


def cmd_backproject(args) -> int:
    mesh = read_ply(args.mesh)
    d = Path(args.views)
    amaps = sorted(d.glob("view_*.amap"))
    if not amaps:
        raise DataError(f"{d}: no view_*.amap files")
    views = []
    for p in amaps:
        amap = read_amap(p)
        fp = p.with_suffix(".fmap")
        if not fp.exists():
            raise DataError(f"{fp}: missing feature map for {p.name}")
        feat = read_fmap(fp)
        if feat.data.shape[:2] != (amap.height, amap.width):
            feat = upsample_bilinear(feat, amap.height, amap.width)
        if amap.triangle.max(initial=-1) >= mesh.n_faces:
            raise DataError(f"{p}: triangle id beyond the mesh's {mesh.n_faces} faces")
        views.append((amap, feat))
    dims = {v[1].data.shape[2] for v in views}
    if len(dims) != 1:
        raise DataError(f"feature maps disagree on channel count: {sorted(dims)}")
    acc = backproject_views(views, mesh.faces, mesh.n_vertices, dims.pop(), threads=args.threads)
    write_vftr(args.out, finalize(acc))
    print(f"wrote {args.out}: vertex coverage {vertex_coverage(acc):.4f}")
    return EXIT_OK


def _point_set(mesh_path, feature_path, mode):
    mesh = read_ply(mesh_path)
    store = read_vftr(feature_path) if feature_path else None
    if store is not None and store.features.shape[0] != mesh.n_vertices:
        raise DataError(f"{feature_path}: {store.features.shape[0]} rows for {mesh.n_vertices} vertices")
    return mesh, mesh_point_set(mesh, store, mode)


def cmd_sample(args) -> int:
    mode = "xyz+n+d" if args.features else "xyz+n"
    mesh, ps = _point_set(args.mesh, args.features, mode)
    if args.center is None:
        idx = np.arange(len(ps))
    else:
        idx = extract_subvolume(ps, SubVolumeSpec(args.center[0], args.center[1], args.size, args.size))
    if len(idx) == 0:
        raise DataError("the requested window contains no vertices")
    if args.method == "fps":
        chosen = idx[farthest_point_sample(ps.positions[idx], min(args.points, len(idx)))]
    else:
        chosen = sample_random(idx, args.points, args.seed)
    sub = ps.take(chosen)
    normals = sub.features[:, :3]
    colors = mesh.colors[chosen] if mesh.colors is not None else None
    save_ply(args.out, Mesh(sub.positions, np.zeros((0, 3)), normals, colors, sub.labels))
    print(f"wrote {args.out}: {len(chosen)} points")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    feats = args.features or []
    if args.mode == "xyz+n+d" and len(feats) != len(args.mesh):
        raise DataError("mode xyz+n+d needs one --features file per --mesh")
    data = []
    image_dim = None
    for k, m in enumerate(args.mesh):
        _, ps = _point_set(m, feats[k] if args.mode == "xyz+n+d" else None, args.mode)
        if args.mode == "xyz+n+d":
            image_dim = ps.features.shape[1] - 3 if image_dim is None else image_dim
            if ps.features.shape[1] - 3 != image_dim:
                raise DataError("feature files disagree on channel count")
        data += training_windows(ps, args.windows, args.seed * 7919 + k)
    if not data:
        raise DataError("no training window passed the annotation filter")
    config = replace(
        toy_model_config(args.mode, image_dim or 0, use_global=not args.no_global),
        subvolume_points=args.subvol_points,
        scene_points=args.scene_points,
    )
    def report(step, loss):
        print(f"step {step} loss {loss:.5f}", flush=True)

    res = train_toy(
        data, config, args.steps, args.seed, TrainConfig(base_lr=args.lr, log_every=args.log_every), callback=report
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "model.cfg", config)
    save_checkpoint(out / "model.pnet", res.params)
    tail = res.losses[-min(50, len(res.losses)) :]
    print(f"trained {args.steps} steps on {len(data)} windows; final loss {np.nanmean(tail):.5f}")
    return EXIT_OK


def _mode_for(config) -> str:
    return {0: "xyz", 3: "xyz+n"}.get(config.input_feature_dim, "xyz+n+d")


def cmd_infer(args) -> int:
    d = Path(args.model)
    config = load_config(d / "model.cfg")
    params = load_checkpoint(d / "model.pnet")
    check_params(config, params)
    mode = _mode_for(config)
    mesh, ps = _point_set(args.mesh, args.features if mode == "xyz+n+d" else None, mode)
    if ps.features.shape[1] != config.input_feature_dim:
        raise DataError(f"model expects {config.input_feature_dim} feature channels, data has {ps.features.shape[1]}")
    sched = window_schedule(mesh.bounds(), args.window, args.stride, args.pad)
    field = infer_scene(ps, (config, params), sched, args.seed, args.threads)
    pred = argmax_labels(field)
    write_predictions(args.out, pred)
    print(f"wrote {args.out}: {len(sched)} windows, {int((field.window_counts == 0).sum())} vertices never sampled")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = read_predictions(args.pred)
    gt = read_ply(args.gt)
    if gt.labels is None:
        raise DataError(f"{args.gt}: mesh has no label property")
    names = CLASS_NAMES if args.num_classes == NUM_CLASSES else None
    res = evaluate_miou(pred, gt.labels, args.num_classes)
    sys.stdout.write(format_report(res, names))
    return EXIT_OK


def cmd_export_ply(args) -> int:
    mesh = read_ply(args.mesh)
    pred = read_predictions(args.pred)
    if len(pred) != mesh.n_vertices:
        raise DataError(f"{args.pred}: {len(pred)} labels for {mesh.n_vertices} vertices")
    if pred.min(initial=0) < 0:
        raise DataError(f"{args.pred}: negative label id")
    colors = np.array([class_color(int(c)) for c in range(int(pred.max(initial=0)) + 1)], dtype=np.uint8)
    save_ply(args.out, Mesh(mesh.vertices, mesh.faces, mesh.normals, colors[pred], pred))
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads; 1 = sequential reference mode")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")

    p = _Parser(prog="pointfuse", description="Point-based 3D semantic segmentation toolkit.", parents=[common])
    p.set_defaults(threads=1, seed=0, verbose=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-scene", cmd_gen_scene, "generate a labeled synthetic room as an ASCII PLY")
    sp.add_argument("--out", required=True, help="output PLY path")
    sp.add_argument("--room", type=float, nargs=3, default=(4.0, 4.0, 2.6), metavar=("W", "D", "H"), help="room extents in meters")
    sp.add_argument("--jitter", type=float, default=0.15, help="relative random scaling of each room extent")
    sp.add_argument("--boxes", type=int, nargs=2, default=(2, 4), metavar=("MIN", "MAX"), help="furniture box count range")
    sp.add_argument("--panels", type=int, nargs=2, default=(1, 3), metavar=("MIN", "MAX"), help="wall panel count range")
    sp.add_argument("--grid-step", type=float, default=0.2, help="max edge length after tessellation; 0 keeps 2 triangles per quad")

    sp = add("gen-poses", cmd_gen_poses, "enumerate candidate cameras, filter by context, greedily pick for coverage")
    sp.add_argument("--mesh", required=True, help="scene PLY")
    sp.add_argument("--out-dir", required=True, help="writes intrinsics.txt, resolution.txt, manifest.txt and one pose_NNNN.txt per candidate")
    sp.add_argument("--preset", choices=("default", "toy"), default="default", help="toy: 4x4 grid, 30x40 images, budget 64")
    sp.add_argument("--grid", type=int, nargs=2, metavar=("W", "D"), help="horizontal grid cells")
    sp.add_argument("--heights", type=float, nargs="+", help="camera heights above the floor (m)")
    sp.add_argument("--attitudes", type=float, nargs="+", help="pitch angles in degrees, negative looks down")
    sp.add_argument("--azimuths", type=float, nargs="+", help="yaw angles in degrees")
    sp.add_argument("--resolution", type=int, nargs=2, metavar=("H", "W"), help="image size")
    sp.add_argument("--hfov", type=float, default=60.0, help="horizontal field of view in degrees")
    sp.add_argument("--threshold", type=float, help="minimum hit-pixel fraction (default 0.25)")
    sp.add_argument("--budget", type=int, help="number of views to select (default: all that add coverage)")

    sp = add("render", cmd_render, "ray-cast association maps and synthetic feature maps for selected poses")
    sp.add_argument("--mesh", required=True, help="scene PLY")
    sp.add_argument("--poses", required=True, help="directory written by gen-poses")
    sp.add_argument("--out-dir", required=True, help="writes view_NNNN.amap and view_NNNN.fmap")
    sp.add_argument("--feature-dim", type=int, default=32, help="synthetic feature channels; 0 skips feature maps")
    sp.add_argument("--noise", type=float, default=0.1, help="Gaussian noise sigma added to features")

    sp = add("backproject", cmd_backproject, "splat per-pixel features onto mesh vertices")
    sp.add_argument("--mesh", required=True, help="scene PLY")
    sp.add_argument("--views", required=True, help="directory with view_NNNN.amap / .fmap pairs")
    sp.add_argument("--out", required=True, help="output VFTR path")

    sp = add("sample", cmd_sample, "extract a sub-volume and subsample it into a point PLY")
    sp.add_argument("--mesh", required=True, help="scene PLY")
    sp.add_argument("--features", help="VFTR file (optional; only checked for consistency)")
    sp.add_argument("--center", type=float, nargs=2, metavar=("X", "Y"), help="window center; omit for the whole scene")
    sp.add_argument("--size", type=float, default=1.5, help="window side length (m)")
    sp.add_argument("--points", "--subvol-points", dest="points", type=int, default=8192, help="number of points to keep")
    sp.add_argument("--method", choices=("random", "fps"), default="random", help="random (with replacement when short) or farthest point")
    sp.add_argument("--out", required=True, help="output PLY path")

    sp = add("train-toy", cmd_train_toy, "train the scaled-down network on one or more scenes")
    sp.add_argument("--mesh", required=True, nargs="+", help="training scene PLYs")
    sp.add_argument("--features", nargs="+", help="VFTR per mesh (required for xyz+n+d)")
    sp.add_argument("--mode", choices=FEATURE_MODES, default="xyz+n+d", help="input channels")
    sp.add_argument("--steps", type=int, default=600, help="optimizer steps")
    sp.add_argument("--lr", type=float, default=3e-3, help="base learning rate")
    sp.add_argument("--windows", type=int, default=40, help="training windows drawn per scene")
    sp.add_argument("--subvol-points", type=int, default=128, help="points sampled per training window")
    sp.add_argument("--scene-points", type=int, default=256, help="points sampled from the whole scene")
    sp.add_argument("--log-every", type=int, default=10, help="print the loss every N steps")
    sp.add_argument("--no-global", action="store_true", help="drop the scene-level context encoder")
    sp.add_argument("--out-dir", required=True, help="writes model.cfg and model.pnet")

    sp = add("infer", cmd_infer, "sliding-window inference over a scene")
    sp.add_argument("--mesh", required=True, help="scene PLY")
    sp.add_argument("--features", help="VFTR file (required when the model uses image features)")
    sp.add_argument("--model", required=True, help="directory written by train-toy")
    sp.add_argument("--stride", type=float, default=0.45, help="window stride (m)")
    sp.add_argument("--window", type=float, default=1.5, help="window side length (m)")
    sp.add_argument("--pad", type=float, default=0.5, help="padding around the scene bounds (m)")
    sp.add_argument("--out", required=True, help="predicted labels, one per line")

    sp = add("eval", cmd_eval, "per-class IoU and mIoU against a labeled PLY")
    sp.add_argument("--pred", required=True, help="predicted labels, one per line")
    sp.add_argument("--gt", required=True, help="labeled scene PLY")
    sp.add_argument("--num-classes", type=int, default=NUM_CLASSES, help="label ids run from 1 to this value")

    sp = add("export-ply", cmd_export_ply, "write the mesh colored and labeled by predictions")
    sp.add_argument("--mesh", required=True, help="scene PLY")
    sp.add_argument("--pred", required=True, help="predicted labels, one per line")
    sp.add_argument("--out", required=True, help="output PLY path")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("pointfuse: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ValueError, OSError, struct.error, PlacementError, TrainingDiverged) as exc:
        print(f"pointfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
