"""viewfuse command line: synth, project, inpaint, consistency, pipeline,
fuse, eval, loss, bench.

Config resolution is layered: built-in defaults, then a ``--config`` file of
``key = value`` lines, then explicit flags. Every command writes a
``report.json`` echoing the fully resolved config and per-step timings.
Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .consistency import ConsistencyConfig, run_consistency
from .errors import ViewFuseError
from .inpaint import BackendSpec
from .loss import LossConfig, PredictionSet, area_sensitive_ce
from .masks import ProjectionConfig, project_masks
from .metrics import chamfer, image_metrics, mask_metrics
from .refine import RefineConfig, fuse, refine, save_cloud_ply, save_mesh_ply, tsdf_fuse
from .scene import (
    load_bundle,
    load_color_png,
    load_mask_png,
    load_mesh_ply,
    save_bundle,
    save_color_png,
    save_depth_vfd,
    save_mask_png,
    load_depth_vfd,
)
from .synth import SceneSpec, generate

logger = logging.getLogger("viewfuse")

_BACKEND_ALIASES = {
    "diffusion": "diffusion_color",
    "diffusion_color": "diffusion_color",
    "planefit": "planefit_depth",
    "planefit_depth": "planefit_depth",
    "oracle": "oracle",
    "external": "external",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _StageTimer:
    def __init__(self):
        self.rows = []

    def record(self, step, seconds, output_size):
        self.rows.append({"step": step, "seconds": round(seconds, 4), "output_size": output_size})

    def run(self, step, fn, describe=lambda r: ""):
        t0 = time.perf_counter()
        result = fn()
        self.record(step, time.perf_counter() - t0, describe(result))
        return result


def _load_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"config line without '=': {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = raw
    return values


def _coerce(raw, like):
    if like is None or isinstance(like, str):
        return raw
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _resolve(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags (flags parse to None when not
    given, so merging is by presence)."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        file_values = _load_config_file(config_path)
        for key, raw in file_values.items():
            if key in merged:
                merged[key] = _coerce(raw, merged[key])
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _write_report(out_dir, command, config, timer: _StageTimer, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    report = {
        "command": command,
        "viewfuse_version": __version__,
        "config": config,
        "steps": timer.rows,
    }
    if extra:
        report.update(extra)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
    return path


def _backend_spec(name: str, command: str | None, role: str) -> BackendSpec:
    kind = _BACKEND_ALIASES.get(name)
    if kind is None:
        raise _UsageError(f"unknown {role} backend {name!r}")
    params = {}
    if kind == "external":
        if not command:
            raise _UsageError(f"external {role} backend needs --external-{role}-cmd")
        params["command"] = command
    return BackendSpec(kind, params)


def _consistency_config(cfg: dict) -> ConsistencyConfig:
    return ConsistencyConfig(
        alpha=cfg["alpha"], beta_percent=cfg["beta"],
        max_region_fraction=cfg["max_region_frac"], occlusion_tol=cfg["occlusion_tol"],
        connectivity=cfg["connectivity"],
        keep_unsupported=not cfg["strict_voting"],
    )


def _disabled_stages(ablate: list[str] | None) -> frozenset:
    mapping = {"no-single-prune": "single-prune", "no-cross-prune": "cross-prune",
               "no-voting": "voting"}
    disabled = set()
    for item in ablate or []:
        if item not in mapping:
            raise _UsageError(f"unknown ablation {item!r} (choose from {sorted(mapping)})")
        disabled.add(mapping[item])
    return frozenset(disabled)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args):
    defaults = {"depth_format": "vfd"}
    cfg = _resolve(args, defaults)
    timer = _StageTimer()
    with open(args.spec) as f:
        spec = SceneSpec.from_json(f.read())
    cluttered, clean = timer.run("generate", lambda: generate(spec),
                                 lambda r: f"{r[0].n_frames} frames")
    timer.run("save", lambda: save_bundle(cluttered, args.out, depth_format=cfg["depth_format"]),
              lambda r: args.out)
    if args.clean_out:
        save_bundle(clean, args.clean_out, depth_format=cfg["depth_format"])
    _write_report(args.out, "synth", {**cfg, "spec": args.spec, "seed": spec.seed}, timer)
    return 0


def _cmd_project(args):
    defaults = {"dilate": 6, "tol": 0.05, "stride": 5}
    cfg = _resolve(args, defaults)
    timer = _StageTimer()
    bundle = timer.run("load", lambda: load_bundle(args.bundle, stride=cfg["stride"]),
                       lambda b: f"{b.n_frames} frames")
    pcfg = ProjectionConfig(dilation_iters=cfg["dilate"], depth_agreement_tol=cfg["tol"])
    masks = timer.run("project", lambda: project_masks(bundle.mesh, bundle.frames, pcfg),
                      lambda m: f"{sum(int(x.sum()) for x in m)} px")
    out = args.out or os.path.join(args.bundle, "mask")
    os.makedirs(out, exist_ok=True)
    for frame, mask in zip(bundle.frames, masks):
        save_mask_png(os.path.join(out, f"{frame.source_id:06d}.png"), frame.mask)
    _write_report(args.out or args.bundle, "project", cfg, timer,
                  extra={"mask_pixels": [int(m.sum()) for m in masks]})
    return 0


def _inpaint_once(bundle, cfg, color_spec, depth_spec):
    from .inpaint import InpaintRequest, resolve_color_backend, resolve_depth_backend

    color_backend = resolve_color_backend(color_spec)
    depth_backend = resolve_depth_backend(depth_spec)
    results = []
    for f in bundle.frames:
        holes = f.mask & (f.captured_depth.values > 0)
        color0 = np.where(f.mask[..., None], 0, f.color).astype(np.uint8)
        depth0 = np.where(f.mask, 0.0, f.captured_depth.values)
        clean = bundle.clean_renders[f.id] if bundle.clean_renders else None
        req = InpaintRequest(
            color=color0, depth=depth0, hole_mask=holes, camera=f.camera,
            captured_depth=f.captured_depth.values,
            clean_color=None if clean is None else clean.color,
            clean_depth=None if clean is None else clean.depth.values,
            frame_id=f.id)
        color = color_backend(req)
        req.guidance = color
        depth = depth_backend(req)
        results.append((color, depth, holes))
    return results


def _cmd_inpaint(args):
    defaults = {"stride": 5, "backend_color": "diffusion", "backend_depth": "planefit"}
    if args.backend:
        # single-backend shorthand: route by kind, oracle/external drive both
        kind = _BACKEND_ALIASES.get(args.backend)
        if kind is None:
            raise _UsageError(f"unknown backend {args.backend!r}")
        if kind.endswith("_color"):
            args.backend_color = args.backend
        elif kind.endswith("_depth"):
            args.backend_depth = args.backend
        else:
            args.backend_color = args.backend_color or args.backend
            args.backend_depth = args.backend_depth or args.backend
    cfg = _resolve(args, defaults)
    timer = _StageTimer()
    bundle = timer.run("load", lambda: load_bundle(args.bundle, stride=cfg["stride"]),
                       lambda b: f"{b.n_frames} frames")
    color_spec = _backend_spec(cfg["backend_color"], args.external_color_cmd, "color")
    depth_spec = _backend_spec(cfg["backend_depth"], args.external_depth_cmd, "depth")
    results = timer.run("inpaint", lambda: _inpaint_once(bundle, cfg, color_spec, depth_spec),
                        lambda r: f"{len(r)} frames")
    os.makedirs(os.path.join(args.out, "color"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "depth"), exist_ok=True)
    for f, (color, depth, _) in zip(bundle.frames, results):
        save_color_png(os.path.join(args.out, "color", f"{f.id:06d}.png"), color)
        save_depth_vfd(os.path.join(args.out, "depth", f"{f.id:06d}.vfd"), depth)
    _write_report(args.out, "inpaint", cfg, timer)
    return 0


_CONSISTENCY_DEFAULTS = {
    "alpha": 0.05, "beta": 30.0, "max_region_frac": 0.5, "occlusion_tol": 0.01,
    "connectivity": 4, "strict_voting": False, "stride": 5, "threads": os.cpu_count() or 1,
}


def _cmd_consistency(args):
    cfg = _resolve(args, _CONSISTENCY_DEFAULTS)
    timer = _StageTimer()
    bundle = timer.run("load", lambda: load_bundle(args.bundle, stride=cfg["stride"]),
                       lambda b: f"{b.n_frames} frames")
    captured = [f.captured_depth.values for f in bundle.frames]
    holes = [f.mask & (d > 0) for f, d in zip(bundle.frames, captured)]
    inpainted = []
    for f in bundle.frames:
        path = os.path.join(args.inpainted, "depth", f"{f.id:06d}.vfd")
        inpainted.append(load_depth_vfd(path).values)
    ccfg = _consistency_config(cfg)
    disabled = _disabled_stages(args.ablate)
    stage_maps, counts = timer.run(
        "consistency",
        lambda: run_consistency(captured, inpainted, holes, holes,
                                [f.camera for f in bundle.frames], ccfg,
                                disabled=disabled, threads=cfg["threads"]),
        lambda r: f"{len(r[1])} frames")
    os.makedirs(os.path.join(args.out, "depth"), exist_ok=True)
    for f, maps in zip(bundle.frames, stage_maps):
        save_depth_vfd(os.path.join(args.out, "depth", f"{f.id:06d}.vfd"), maps[3])
    _write_report(args.out, "consistency", cfg, timer,
                  extra={"ablate": sorted(disabled),
                         "survival": [c.to_dict() for c in counts]})
    return 0


_PIPELINE_DEFAULTS = {
    **_CONSISTENCY_DEFAULTS,
    "dilate": 6, "tol": 0.05, "iters": 10,
    "backend_color": "diffusion", "backend_depth": "planefit",
    "max_depth": 3.5, "max_points": 16_000_000, "voxel": 0.02, "trunc": 0.08,
    "skip_project": False, "skip_mesh": False,
}


def _cmd_pipeline(args):
    cfg = _resolve(args, _PIPELINE_DEFAULTS)
    timer = _StageTimer()
    bundle = timer.run("load", lambda: load_bundle(args.bundle, stride=cfg["stride"]),
                       lambda b: f"{b.n_frames} frames")
    if not cfg["skip_project"]:
        pcfg = ProjectionConfig(dilation_iters=cfg["dilate"], depth_agreement_tol=cfg["tol"])
        timer.run("mask_projection", lambda: project_masks(bundle.mesh, bundle.frames, pcfg),
                  lambda m: f"{sum(int(x.sum()) for x in m)} px")
    color_spec = _backend_spec(cfg["backend_color"], args.external_color_cmd, "color")
    depth_spec = _backend_spec(cfg["backend_depth"], args.external_depth_cmd, "depth")
    ccfg = _consistency_config(cfg)
    rcfg = RefineConfig(max_iterations=cfg["iters"], fuse_max_depth=cfg["max_depth"],
                        fuse_max_points=cfg["max_points"], tsdf_voxel=cfg["voxel"],
                        tsdf_trunc=cfg["trunc"])
    disabled = _disabled_stages(args.ablate)
    out = timer.run("refine",
                    lambda: refine(bundle, color_spec, depth_spec, ccfg, rcfg,
                                   disabled=disabled, threads=cfg["threads"]),
                    lambda r: f"{len(r.report.iterations)} iterations")
    cams = [f.camera for f in bundle.frames]
    cloud = timer.run("fuse", lambda: fuse(out.final_colors, out.final_depths, cams, rcfg),
                      lambda c: f"{len(c.points)} points")
    os.makedirs(args.out, exist_ok=True)
    save_cloud_ply(os.path.join(args.out, "cloud.ply"), cloud)
    if not cfg["skip_mesh"]:
        mesh = timer.run("tsdf_fuse", lambda: tsdf_fuse(out.final_depths, cams, rcfg),
                         lambda m: f"{len(m.vertices)} vertices")
        save_mesh_ply(os.path.join(args.out, "mesh.ply"), mesh)
    os.makedirs(os.path.join(args.out, "depth"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "color"), exist_ok=True)
    for f, color, depth in zip(bundle.frames, out.final_colors, out.final_depths):
        save_color_png(os.path.join(args.out, "color", f"{f.id:06d}.png"), color)
        save_depth_vfd(os.path.join(args.out, "depth", f"{f.id:06d}.vfd"), depth)
    _write_report(args.out, "pipeline", {**cfg, "ablate": sorted(disabled)}, timer,
                  extra={"refine": out.report.to_dict()})
    return 0


def _cmd_fuse(args):
    defaults = {"stride": 5, "max_depth": 3.5, "max_points": 16_000_000,
                "voxel": 0.02, "trunc": 0.08, "skip_mesh": False}
    cfg = _resolve(args, defaults)
    timer = _StageTimer()
    bundle = timer.run("load", lambda: load_bundle(args.bundle, stride=cfg["stride"]),
                       lambda b: f"{b.n_frames} frames")
    rcfg = RefineConfig(fuse_max_depth=cfg["max_depth"], fuse_max_points=cfg["max_points"],
                        tsdf_voxel=cfg["voxel"], tsdf_trunc=cfg["trunc"])
    cams = [f.camera for f in bundle.frames]
    colors = [f.color for f in bundle.frames]
    depths = [f.captured_depth for f in bundle.frames]
    cloud = timer.run("fuse", lambda: fuse(colors, depths, cams, rcfg),
                      lambda c: f"{len(c.points)} points")
    os.makedirs(args.out, exist_ok=True)
    save_cloud_ply(os.path.join(args.out, "cloud.ply"), cloud)
    if not cfg["skip_mesh"]:
        mesh = timer.run("tsdf_fuse", lambda: tsdf_fuse(depths, cams, rcfg),
                         lambda m: f"{len(m.vertices)} vertices")
        save_mesh_ply(os.path.join(args.out, "mesh.ply"), mesh)
    _write_report(args.out, "fuse", cfg, timer)
    return 0


def _paired_files(pred_dir, truth_dir, sub):
    pred_sub = os.path.join(pred_dir, sub)
    truth_sub = os.path.join(truth_dir, sub)
    if os.path.isdir(pred_sub) and os.path.isdir(truth_sub):
        names = sorted(set(os.listdir(pred_sub)) & set(os.listdir(truth_sub)))
        return [(os.path.join(pred_sub, n), os.path.join(truth_sub, n)) for n in names
                if n.endswith(".png")]
    return []


def _cmd_eval(args):
    timer = _StageTimer()
    results: dict = {}

    image_pairs = _paired_files(args.pred, args.truth, "color")
    if image_pairs:
        rows = []
        for p, t in image_pairs:
            rows.append(image_metrics(load_color_png(p), load_color_png(t)))
        results["images"] = {
            "count": len(rows),
            "l1": float(np.mean([r["l1"] for r in rows])),
            "l2": float(np.mean([r["l2"] for r in rows])),
            "psnr": float(np.mean([r["psnr"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows])),
        }

    mask_pairs = _paired_files(args.pred, args.truth, "mask")
    if mask_pairs:
        pred_all = np.concatenate([load_mask_png(p).ravel() for p, _ in mask_pairs])
        gt_all = np.concatenate([load_mask_png(t).ravel() for _, t in mask_pairs])
        results["masks"] = mask_metrics(pred_all, gt_all)

    def _points_of(base):
        cloud_path = os.path.join(base, "cloud.ply")
        mesh_path = os.path.join(base, "mesh.ply")
        if os.path.exists(cloud_path):
            from .ply import read_ply
            props, _ = read_ply(cloud_path)
            return np.stack([props["x"], props["y"], props["z"]], axis=1).astype(np.float64)
        if os.path.exists(mesh_path):
            from .ply import read_ply
            props, tris = read_ply(mesh_path)
            verts = np.stack([props["x"], props["y"], props["z"]], axis=1).astype(np.float64)
            return verts
        return None

    pred_pts = _points_of(args.pred)
    truth_pts = _points_of(args.truth)
    if pred_pts is not None and truth_pts is not None:
        results["chamfer_cm"] = chamfer(pred_pts, truth_pts)
        results["chamfer_definition"] = (
            "mean of the two directed mean nearest-neighbor distances, unsquared, in cm"
        )

    if not results:
        raise ViewFuseError(f"nothing comparable under {args.pred} and {args.truth}")
    report_path = args.report or "metrics.json"
    with open(report_path, "w") as f:
        json.dump(results, f, indent=2)
    print(json.dumps(results, indent=2))
    return 0


def _cmd_loss(args):
    defaults = {"k": 1.0, "lambda_2d": 0.3}
    cfg = _resolve(args, defaults)
    mesh = load_mesh_ply(args.mesh)
    if args.probs.endswith(".npy"):
        probs = np.load(args.probs)
    else:
        probs = np.fromfile(args.probs, dtype=np.float32).reshape(-1, 2).astype(np.float64)
    preds = PredictionSet.from_mesh_labels(mesh, probs)
    loss, contributions = area_sensitive_ce(preds, LossConfig(k=cfg["k"], lambda_2d=cfg["lambda_2d"]))
    payload = {"loss": loss, "k": cfg["k"],
               "per_instance": [c.to_dict() for c in contributions]}
    print(json.dumps(payload, indent=2))
    if args.report:
        with open(args.report, "w") as f:
            json.dump(payload, f, indent=2)
    return 0


def _cmd_bench(args):
    from .synth import CameraRigSpec, PrimitiveSpec

    defaults = {"frames": "10,20,40", "width": 304, "height": 228,
                "threads": os.cpu_count() or 1, "seed": 0}
    cfg = _resolve(args, defaults)
    frame_counts = [int(x) for x in str(cfg["frames"]).split(",") if x]
    timer = _StageTimer()
    scaling = {"frames": [], "seconds": []}
    ccfg = ConsistencyConfig()
    for n in frame_counts:
        spec = SceneSpec(
            room=(6.0, 5.0, 2.6),
            furniture=(PrimitiveSpec(kind="box", size=(0.8, 0.5, 0.45), position=(1.2, 1.0)),),
            clutter=(PrimitiveSpec(kind="box", size=(0.45, 0.4, 0.32), position=(3.3, 2.8)),
                     PrimitiveSpec(kind="box", size=(0.35, 0.3, 0.28), position=(2.6, 2.2))),
            cameras=CameraRigSpec(count=n, width=cfg["width"], height=cfg["height"],
                                  distance=(2.2, 3.2), elevation=(0.7, 1.1)),
            seed=cfg["seed"],
        )
        cluttered, clean = generate(spec)
        project_masks(cluttered.mesh, cluttered.frames, ProjectionConfig())
        captured = [f.captured_depth.values for f in cluttered.frames]
        holes = [f.mask & (d > 0) for f, d in zip(cluttered.frames, captured)]
        inpainted = []
        for f, h in zip(cluttered.frames, holes):
            d = captured[f.id].copy()
            d[h] = cluttered.clean_renders[f.id].depth.values[h]
            inpainted.append(d)
        cams = [f.camera for f in cluttered.frames]
        t0 = time.perf_counter()
        run_consistency(captured, inpainted, holes, holes, cams, ccfg, threads=cfg["threads"])
        dt = time.perf_counter() - t0
        scaling["frames"].append(n)
        scaling["seconds"].append(round(dt, 4))
        timer.record(f"consistency_{n}_frames", dt,
                     f"{n} images {cfg['width']}x{cfg['height']}")
        print(f"consistency on {n} frames: {dt:.2f} s")
    exponent = None
    if len(frame_counts) >= 2:
        logn = np.log(np.asarray(scaling["frames"], dtype=np.float64))
        logt = np.log(np.maximum(np.asarray(scaling["seconds"], dtype=np.float64), 1e-9))
        exponent = float(np.polyfit(logn, logt, 1)[0])
        print(f"scaling exponent: {exponent:.2f}")
    out_dir = args.out or "."
    _write_report(out_dir, "bench", cfg, timer,
                  extra={"scaling": {**scaling, "exponent": exponent}})
    budgets = {}
    for item in args.budget or []:
        step, _, seconds = item.partition("=")
        budgets[step] = float(seconds)
    failures = [f"{row['step']}: {row['seconds']}s > {budgets[row['step']]}s"
                for row in timer.rows if row["step"] in budgets and row["seconds"] > budgets[row["step"]]]
    for failure in failures:
        print("budget exceeded:", failure, file=sys.stderr)
    return 2 if failures and args.strict_budgets else 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="viewfuse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key=value config file (defaults < file < flags)")
        return p

    p = add("synth", _cmd_synth, "generate a synthetic RGB-D bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clean-out", dest="clean_out")
    p.add_argument("--depth-format", dest="depth_format", choices=("png16", "vfd"))

    p = add("project", _cmd_project, "project clutter masks into every view")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.add_argument("--dilate", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--stride", type=int)

    p = add("inpaint", _cmd_inpaint, "single inpainting pass over masked frames")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", help="shorthand; routed to color or depth by kind")
    p.add_argument("--backend-color", dest="backend_color")
    p.add_argument("--backend-depth", dest="backend_depth")
    p.add_argument("--external-color-cmd", dest="external_color_cmd")
    p.add_argument("--external-depth-cmd", dest="external_depth_cmd")
    p.add_argument("--stride", type=int)

    p = add("consistency", _cmd_consistency, "run the four consistency stages once")
    p.add_argument("--bundle", required=True)
    p.add_argument("--inpainted", required=True, help="dir from `viewfuse inpaint`")
    p.add_argument("--out", required=True)
    for flag, typ in (("--alpha", float), ("--beta", float), ("--max-region-frac", float),
                      ("--occlusion-tol", float), ("--connectivity", int),
                      ("--stride", int), ("--threads", int)):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--strict-voting", dest="strict_voting", action="store_true", default=None)
    p.add_argument("--ablate", action="append")

    p = add("pipeline", _cmd_pipeline, "full refinement pipeline: project, inpaint, prune, fuse")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend-color", dest="backend_color")
    p.add_argument("--backend-depth", dest="backend_depth")
    p.add_argument("--external-color-cmd", dest="external_color_cmd")
    p.add_argument("--external-depth-cmd", dest="external_depth_cmd")
    for flag, typ in (("--alpha", float), ("--beta", float), ("--max-region-frac", float),
                      ("--occlusion-tol", float), ("--connectivity", int),
                      ("--stride", int), ("--threads", int), ("--iters", int),
                      ("--dilate", int), ("--tol", float), ("--max-depth", float),
                      ("--max-points", int), ("--voxel", float), ("--trunc", float)):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--strict-voting", dest="strict_voting", action="store_true", default=None)
    p.add_argument("--skip-project", dest="skip_project", action="store_true", default=None)
    p.add_argument("--skip-mesh", dest="skip_mesh", action="store_true", default=None)
    p.add_argument("--ablate", action="append",
                   help="no-single-prune | no-cross-prune | no-voting (repeatable)")

    p = add("fuse", _cmd_fuse, "fuse captured frames into cloud.ply and mesh.ply")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    for flag, typ in (("--stride", int), ("--max-depth", float), ("--max-points", int),
                      ("--voxel", float), ("--trunc", float)):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--skip-mesh", dest="skip_mesh", action="store_true", default=None)

    p = add("eval", _cmd_eval, "compare predicted artifacts against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report")

    p = add("loss", _cmd_loss, "area-sensitive cross entropy over a labeled mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--probs", required=True, help="float32 Nx2 raw file or .npy")
    p.add_argument("--k", type=float)
    p.add_argument("--lambda", dest="lambda_2d", type=float)
    p.add_argument("--report")

    p = add("bench", _cmd_bench, "time the consistency stages over frame counts")
    p.add_argument("--frames")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--budget", action="append", help="step=seconds (repeatable)")
    p.add_argument("--strict-budgets", dest="strict_budgets", action="store_true", default=False)

    return parser


def _suggest(argv, message):
    known = set()
    for action_group in _build_parser()._subparsers._group_actions:
        for choice in action_group.choices.values():
            for action in choice._actions:
                known.update(opt for opt in action.option_strings)
    for token in argv:
        if token.startswith("--"):
            flag = token.split("=", 1)[0]
            if flag not in known:
                close = difflib.get_close_matches(flag, sorted(known), n=1)
                if close:
                    return f"{message} (did you mean {close[0]}?)"
    return message


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=os.environ.get("VIEWFUSE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.print_help()
            return 1
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage error: {_suggest(argv, str(exc))}", file=sys.stderr)
        return 1
    except ViewFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
