#!/usr/bin/env python3
"""Per-stage timing harness on a synthetic sequence.

Generates a bundle at the given size, then times each pipeline step
separately (mask projection, color inpainting, depth completion, the four
consistency stages, point fusion, TSDF fusion) and prints a table of
step / time / output size, plus the consistency scaling exponent over a
frame-count sweep.

Usage:
    python scripts/run_timing.py --frames 50 --width 304 --height 228
"""

import argparse
import time

import numpy as np

from viewfuse.consistency import ConsistencyConfig, run_consistency
from viewfuse.inpaint import BackendSpec, resolve_color_backend, resolve_depth_backend, InpaintRequest
from viewfuse.masks import ProjectionConfig, project_masks
from viewfuse.refine import RefineConfig, fuse, tsdf_fuse
from viewfuse.synth import CameraRigSpec, PrimitiveSpec, SceneSpec, generate


def bench_spec(n_frames, width, height, seed):
    return SceneSpec(
        room=(6.0, 5.0, 2.6),
        furniture=(PrimitiveSpec(kind="box", size=(0.8, 0.5, 0.45), albedo=(0.5, 0.3, 0.2),
                                 position=(1.2, 1.0)),),
        clutter=(PrimitiveSpec(kind="box", size=(0.45, 0.4, 0.32), albedo=(0.8, 0.2, 0.2), position=(3.3, 2.8)),
                 PrimitiveSpec(kind="box", size=(0.35, 0.3, 0.28), albedo=(0.3, 0.7, 0.2), position=(2.6, 2.2))),
        cameras=CameraRigSpec(count=n_frames, width=width, height=height,
                              distance=(2.2, 3.2), elevation=(0.7, 1.1)),
        seed=seed,
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=50)
    parser.add_argument("--width", type=int, default=304)
    parser.add_argument("--height", type=int, default=228)
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--sweep", default="10,20,40",
                        help="frame counts for the scaling fit (empty to skip)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rows = []

    def step(name, fn, size):
        t0 = time.perf_counter()
        result = fn()
        rows.append((name, time.perf_counter() - t0, size))
        return result

    n = args.frames
    cluttered, clean = step("scene generation",
                            lambda: generate(bench_spec(n, args.width, args.height, args.seed)),
                            f"{2 * n} renders {args.width}x{args.height}")
    frames = cluttered.frames
    step("mask projection",
         lambda: project_masks(cluttered.mesh, frames, ProjectionConfig()),
         f"{n} masks")

    color_backend = resolve_color_backend(BackendSpec("diffusion_color", {"iterations": 300}))
    depth_backend = resolve_depth_backend(BackendSpec("planefit_depth"))

    def make_request(f):
        holes = f.mask & (f.captured_depth.values > 0)
        return InpaintRequest(
            color=np.where(f.mask[..., None], 0, f.color).astype(np.uint8),
            depth=np.where(f.mask, 0.0, f.captured_depth.values),
            hole_mask=holes, camera=f.camera, captured_depth=f.captured_depth.values,
            frame_id=f.id)

    requests = [make_request(f) for f in frames]
    colors = step("color inpainting", lambda: [color_backend(r) for r in requests],
                  f"{n} images {args.width}x{args.height}")
    for req, color in zip(requests, colors):
        req.guidance = color
    completed = step("depth completion", lambda: [depth_backend(r) for r in requests],
                  f"{n} images {args.width}x{args.height}")

    captured = [f.captured_depth.values for f in frames]
    holes = [r.hole_mask for r in requests]
    proposals = []
    for f, d_new in zip(frames, completed):
        d = np.where(f.mask, 0.0, f.captured_depth.values)
        d[holes[f.id]] = d_new[holes[f.id]]
        proposals.append(d)
    cams = [f.camera for f in frames]
    ccfg = ConsistencyConfig()
    stage_maps, _ = step("consistency checks",
                         lambda: run_consistency(captured, proposals, holes, holes, cams, ccfg,
                                                 threads=args.threads),
                         f"{n} images {args.width}x{args.height}")
    final = [maps[3] for maps in stage_maps]
    rcfg = RefineConfig()
    step("point fusion", lambda: fuse(colors, final, cams, rcfg), "cloud")
    step("tsdf + marching cubes", lambda: tsdf_fuse(final, cams, rcfg), "mesh")

    print(f"\n{'step':<24}{'time':>10}  output")
    for name, seconds, size in rows:
        print(f"{name:<24}{seconds:>9.2f}s  {size}")

    if args.sweep:
        counts = [int(x) for x in args.sweep.split(",")]
        times = []
        for c in counts:
            b, _ = generate(bench_spec(c, args.width, args.height, args.seed))
            project_masks(b.mesh, b.frames, ProjectionConfig())
            dc = [f.captured_depth.values for f in b.frames]
            hs = [f.mask & (d > 0) for f, d in zip(b.frames, dc)]
            dp = []
            for f, h in zip(b.frames, hs):
                d = dc[f.id].copy()
                d[h] = b.clean_renders[f.id].depth.values[h]
                dp.append(d)
            t0 = time.perf_counter()
            run_consistency(dc, dp, hs, hs, [f.camera for f in b.frames], ccfg,
                            threads=args.threads)
            times.append(time.perf_counter() - t0)
            print(f"consistency at {c} frames: {times[-1]:.2f}s")
        exponent = float(np.polyfit(np.log(counts), np.log(times), 1)[0])
        print(f"scaling exponent: {exponent:.2f} (pairwise stages are O(n^2))")


if __name__ == "__main__":
    main()
