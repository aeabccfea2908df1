"""Iterative inpaint/consistency refinement and final fusion.

Each round inpaints the current holes of every frame, runs the four
consistency stages on the freshly filled pixels, accepts survivors into the
working RGB-D maps and re-opens pruned pixels as holes for the next round.
The loop stops when no holes remain, when an iteration accepts fewer than
``min_progress_pixels``, or at ``max_iterations``; leftover holes are then
filled by one unconstrained pass (flagged in the report) so fusion never
starves.

Fusion produces an oriented point cloud (for external surface reconstruction)
and a built-in TSDF + marching-cubes mesh.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import measure

from .consistency import ConsistencyConfig, StageCounts, run_consistency
from .errors import BackendError, ConfigError, EmptyCloudError, GridTooLargeError, UnfillableHoleError
from .geometry import CameraModel, DepthMap, as_depth_values
from .inpaint import InpaintRequest, resolve_color_backend, resolve_depth_backend
from .scene import InpaintState, SceneBundle
from . import ply

logger = logging.getLogger(__name__)

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 10
    min_progress_pixels: int = 1
    fuse_max_depth: float = 3.5
    fuse_max_points: int = 16_000_000
    tsdf_voxel: float = 0.02
    tsdf_trunc: float = 0.08
    # samples whose 3x3 depth spread exceeds this are silhouette edges and are
    # not integrated; a voxel sampled across such an edge would get a bogus
    # signed distance and seed phantom surfaces in free space
    tsdf_edge_spread: float = 0.15
    max_voxels: int = 150_000_000
    subsample_seed: int = 0
    fallback_fill: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.fuse_max_depth <= 0:
            raise ConfigError(f"fuse_max_depth must be > 0, got {self.fuse_max_depth}")
        if self.tsdf_trunc < self.tsdf_voxel:
            raise ConfigError("tsdf_trunc must be >= tsdf_voxel")


@dataclass
class IterationRecord:
    iteration: int
    per_frame: list[StageCounts]
    accepted: int
    remaining_holes: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "accepted": self.accepted,
            "remaining_holes": self.remaining_holes,
            "per_frame": [c.to_dict() for c in self.per_frame],
        }


@dataclass
class RefineReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    fallback_used: bool = False
    unfillable_pixels: int = 0

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "fallback_used": self.fallback_used,
            "unfillable_pixels": self.unfillable_pixels,
            "iterations": [r.to_dict() for r in self.iterations],
        }


@dataclass
class RefineOutput:
    states: list[InpaintState]
    report: RefineReport
    final_colors: list[np.ndarray]
    final_depths: list[DepthMap]


def _inpaint_frame(color_backend, depth_backend, color, depth, holes, frame,
                   clean, iteration: int):
    req = InpaintRequest(
        color=color, depth=depth, hole_mask=holes, camera=frame.camera,
        captured_depth=frame.captured_depth.values,
        clean_color=None if clean is None else clean.color,
        clean_depth=None if clean is None else clean.depth.values,
        frame_id=frame.id, iteration=iteration,
    )
    new_color = color_backend(req)
    req.guidance = new_color
    try:
        new_depth = depth_backend(req)
    except UnfillableHoleError as exc:
        logger.warning("iteration %d: %s", iteration, exc)
        return new_color, depth.copy(), False
    return new_color, new_depth, True


def refine(bundle: SceneBundle, color_backend, depth_backend,
           ccfg: ConsistencyConfig | None = None, rcfg: RefineConfig | None = None,
           disabled: frozenset = frozenset(), threads: int | None = 1) -> RefineOutput:
    """Run the inpaint/consistency loop over a bundle whose frame masks are
    already projected. ``disabled`` may name consistency stages to skip
    (``single-prune``, ``cross-prune``, ``voting``)."""
    ccfg = ccfg or ConsistencyConfig()
    rcfg = rcfg or RefineConfig()
    color_backend = resolve_color_backend(color_backend)
    depth_backend = resolve_depth_backend(depth_backend)

    n = bundle.n_frames
    cams = [f.camera for f in bundle.frames]
    captured = [f.captured_depth.values for f in bundle.frames]
    fillable = [f.mask & (captured[i] > 0) for i, f in enumerate(bundle.frames)]
    cracks = [f.mask & (captured[i] == 0) for i, f in enumerate(bundle.frames)]

    color_work = [np.where(f.mask[..., None], 0, f.color).astype(np.uint8) for f in bundle.frames]
    depth_work = [np.where(f.mask, 0.0, captured[i]) for i, f in enumerate(bundle.frames)]
    holes = [m.copy() for m in fillable]
    ever_holes = [m.copy() for m in fillable]

    report = RefineReport()
    states: list[InpaintState] = [
        InpaintState(proposed_color=color_work[f].copy(), proposed_depth=DepthMap(depth_work[f]),
                     residual_mask=holes[f] | cracks[f], hole_mask=ever_holes[f])
        for f in range(n)
    ]

    for iteration in range(rcfg.max_iterations):
        if not any(h.any() for h in holes):
            report.converged = True
            break

        proposals, colors_new, eval_masks = [], [], []
        for f in range(n):
            if holes[f].any():
                clean = bundle.clean_renders[f] if bundle.clean_renders else None
                try:
                    c_new, filled_depth, _ = _inpaint_frame(
                        color_backend, depth_backend, color_work[f], depth_work[f],
                        holes[f], bundle.frames[f], clean, iteration)
                except BackendError as exc:
                    raise BackendError(f"iteration {iteration}, frame {f}: {exc}") from exc
            else:
                c_new, filled_depth = color_work[f], depth_work[f].copy()
            colors_new.append(c_new)
            proposals.append(filled_depth)
            eval_masks.append(holes[f] & (filled_depth > 0))

        stage_maps, counts = run_consistency(
            captured, proposals, hole_masks=ever_holes, eval_masks=eval_masks,
            cameras=cams, cfg=ccfg, disabled=disabled, threads=threads)

        accepted_total = 0
        for f in range(n):
            final = stage_maps[f][3]
            accepted = eval_masks[f] & (final > 0)
            accepted_total += int(accepted.sum())
            depth_work[f] = np.where(accepted, proposals[f], depth_work[f])
            color_work[f] = np.where(accepted[..., None], colors_new[f], color_work[f]).astype(np.uint8)
            holes[f] = holes[f] & ~accepted
            states[f] = InpaintState(
                proposed_color=colors_new[f],
                proposed_depth=DepthMap(proposals[f]),
                stage_outputs=[DepthMap(m) for m in stage_maps[f]],
                residual_mask=holes[f] | cracks[f],
                hole_mask=ever_holes[f],
            )

        remaining = int(sum(h.sum() for h in holes))
        report.iterations.append(IterationRecord(
            iteration=iteration, per_frame=counts,
            accepted=accepted_total, remaining_holes=remaining))
        if remaining == 0:
            report.converged = True
            break
        if accepted_total < rcfg.min_progress_pixels:
            logger.warning("no progress at iteration %d; %d holes remain", iteration, remaining)
            break

    leftover = int(sum(h.sum() for h in holes))
    if leftover and rcfg.fallback_fill:
        # accept one unconstrained pass so fusion is not starved of pixels
        report.fallback_used = True
        for f in range(n):
            if not holes[f].any():
                continue
            clean = bundle.clean_renders[f] if bundle.clean_renders else None
            c_new, filled_depth, filled = _inpaint_frame(
                color_backend, depth_backend, color_work[f], depth_work[f],
                holes[f], bundle.frames[f], clean, iteration=rcfg.max_iterations)
            got = holes[f] & (filled_depth > 0)
            depth_work[f] = np.where(got, filled_depth, depth_work[f])
            color_work[f] = np.where(got[..., None], c_new, color_work[f]).astype(np.uint8)
            holes[f] = holes[f] & ~got
            states[f].residual_mask = holes[f] | cracks[f]
    report.unfillable_pixels = int(sum(h.sum() for h in holes)) + int(sum(c.sum() for c in cracks))

    return RefineOutput(
        states=states, report=report,
        final_colors=color_work,
        final_depths=[DepthMap(d) for d in depth_work],
    )


# ---------------------------------------------------------------------------
# fusion


@dataclass
class FusedCloud:
    points: np.ndarray   # N x 3
    normals: np.ndarray  # N x 3 unit
    colors: np.ndarray   # N x 3 uint8
    source: np.ndarray   # N x 2 (frame id, flat pixel)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray


def _point_map(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    h, w = depth.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (uu - cam.cx) * depth / cam.fx
    y = (vv - cam.cy) * depth / cam.fy
    pts = np.stack([x, y, depth], axis=-1)
    return pts @ cam.rotation.T + cam.position


def fuse(colors, depths, cameras, rcfg: RefineConfig | None = None) -> FusedCloud:
    """Unproject every valid pixel within the depth cap into an oriented,
    colored point cloud. Normals come from central differences of the point
    map and face the camera; edge pixels without a full neighborhood are
    dropped. Deterministic subsampling caps the cloud size."""
    rcfg = rcfg or RefineConfig()
    all_pts, all_n, all_c, all_src = [], [], [], []
    for f, (color, depth, cam) in enumerate(zip(colors, depths, cameras)):
        d = as_depth_values(depth)
        valid = (d > 0) & (d <= rcfg.fuse_max_depth)
        if not valid.any():
            continue
        pts = _point_map(d, cam)
        inner = valid & ndimage.binary_erosion(valid, structure=_CROSS, border_value=0)
        if not inner.any():
            continue
        du = np.zeros_like(pts)
        dv = np.zeros_like(pts)
        du[:, 1:-1] = pts[:, 2:] - pts[:, :-2]
        dv[1:-1, :] = pts[2:, :] - pts[:-2, :]
        normal = np.cross(dv.reshape(-1, 3), du.reshape(-1, 3)).reshape(pts.shape)
        norm = np.linalg.norm(normal, axis=-1)
        ok = inner & (norm > 1e-12)
        if not ok.any():
            continue
        n_unit = normal[ok] / norm[ok][:, None]
        to_cam = cam.position - pts[ok]
        flip = np.einsum("ij,ij->i", n_unit, to_cam) < 0
        n_unit[flip] *= -1.0
        vvv, uuu = np.nonzero(ok)
        all_pts.append(pts[ok])
        all_n.append(n_unit)
        all_c.append(np.asarray(color)[ok])
        all_src.append(np.stack([np.full(vvv.size, f, dtype=np.int64),
                                 vvv * d.shape[1] + uuu], axis=1))
    if not all_pts:
        raise EmptyCloudError("no valid pixels to fuse")
    points = np.concatenate(all_pts)
    normals = np.concatenate(all_n)
    colors_out = np.concatenate(all_c)
    source = np.concatenate(all_src)
    if len(points) > rcfg.fuse_max_points:
        rng = np.random.default_rng(rcfg.subsample_seed)
        keep = np.sort(rng.choice(len(points), size=rcfg.fuse_max_points, replace=False))
        points, normals, colors_out, source = points[keep], normals[keep], colors_out[keep], source[keep]
    return FusedCloud(points=points, normals=normals, colors=colors_out, source=source)


def tsdf_fuse(depths, cameras, rcfg: RefineConfig | None = None) -> TriangleMesh:
    """Truncated signed-distance integration over a voxel grid, surfaced with
    marching cubes. Deterministic given the frame order."""
    rcfg = rcfg or RefineConfig()
    if len(depths) == 0:
        raise EmptyCloudError("tsdf fusion needs at least one frame")
    depth_arrays = [as_depth_values(d) for d in depths]

    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for d, cam in zip(depth_arrays, cameras):
        valid = (d > 0) & (d <= rcfg.fuse_max_depth)
        if not valid.any():
            continue
        pts = _point_map(d, cam)[valid]
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise EmptyCloudError("no valid depth to fuse")

    pad = rcfg.tsdf_trunc + 2 * rcfg.tsdf_voxel
    lo = lo - pad
    hi = hi + pad
    dims = np.ceil((hi - lo) / rcfg.tsdf_voxel).astype(np.int64) + 1
    if int(np.prod(dims)) > rcfg.max_voxels:
        raise GridTooLargeError(
            f"scene bounds {hi - lo} / voxel {rcfg.tsdf_voxel} need {np.prod(dims)} voxels "
            f"(cap {rcfg.max_voxels})"
        )

    gx, gy, gz = [np.arange(dims[i], dtype=np.float64) * rcfg.tsdf_voxel + lo[i] for i in range(3)]
    xx, yy, zz = np.meshgrid(gx, gy, gz, indexing="ij")
    grid = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    reliable_maps = []
    for d in depth_arrays:
        valid = d > 0
        dmax = ndimage.maximum_filter(np.where(valid, d, -np.inf), size=3,
                                      mode="constant", cval=-np.inf)
        dmin = ndimage.minimum_filter(np.where(valid, d, np.inf), size=3,
                                      mode="constant", cval=np.inf)
        reliable_maps.append(valid & ((dmax - dmin) <= rcfg.tsdf_edge_spread))

    n_nodes = grid.shape[0]
    tsdf = np.zeros(n_nodes, dtype=np.float64)
    weight = np.zeros(n_nodes, dtype=np.float64)
    chunk = 1_000_000
    for d, reliable, cam in zip(depth_arrays, reliable_maps, cameras):
        for start in range(0, n_nodes, chunk):
            sl = slice(start, min(start + chunk, n_nodes))
            p_cam = (grid[sl] - cam.position) @ cam.rotation
            z = p_cam[:, 2]
            front = z > 1e-9
            with np.errstate(divide="ignore", invalid="ignore"):
                u = cam.fx * p_cam[:, 0] / z + cam.cx
                v = cam.fy * p_cam[:, 1] / z + cam.cy
            ui = np.floor(np.where(front, u, -1.0) + 0.5).astype(np.int64)
            vi = np.floor(np.where(front, v, -1.0) + 0.5).astype(np.int64)
            ok = front & (ui >= 0) & (ui < cam.width) & (vi >= 0) & (vi < cam.height)
            ok[ok] = reliable[vi[ok], ui[ok]]
            sample = np.zeros(z.size)
            sample[ok] = d[vi[ok], ui[ok]]
            ok &= (sample > 0) & (sample <= rcfg.fuse_max_depth)
            sdf = sample - z
            ok &= sdf > -rcfg.tsdf_trunc
            val = np.minimum(sdf[ok] / rcfg.tsdf_trunc, 1.0)
            idx = np.nonzero(ok)[0] + start
            w_old = weight[idx]
            tsdf[idx] = (tsdf[idx] * w_old + val) / (w_old + 1.0)
            weight[idx] = w_old + 1.0

    volume = tsdf.reshape(dims)
    observed = (weight > 0).reshape(dims)
    # marching_cubes keys its mask on one cube corner, so an observed voxel
    # next to an unobserved one (holding 0, the iso level) would grow a
    # phantom face; eroding by one voxel keeps only fully observed cubes
    observed = ndimage.binary_erosion(observed, structure=np.ones((3, 3, 3)))
    if not observed.any():
        raise EmptyCloudError("no voxel was observed by any frame")
    verts, faces, _, _ = measure.marching_cubes(
        volume, level=0.0, spacing=(rcfg.tsdf_voxel,) * 3, mask=observed)
    verts = verts + lo
    return TriangleMesh(vertices=verts, triangles=faces.astype(np.int32))


def save_cloud_ply(path, cloud: FusedCloud) -> None:
    ply.write_ply(path, {
        "x": cloud.points[:, 0].astype(np.float32),
        "y": cloud.points[:, 1].astype(np.float32),
        "z": cloud.points[:, 2].astype(np.float32),
        "nx": cloud.normals[:, 0].astype(np.float32),
        "ny": cloud.normals[:, 1].astype(np.float32),
        "nz": cloud.normals[:, 2].astype(np.float32),
        "red": cloud.colors[:, 0],
        "green": cloud.colors[:, 1],
        "blue": cloud.colors[:, 2],
    })


def save_mesh_ply(path, mesh: TriangleMesh) -> None:
    ply.write_ply(path, {
        "x": mesh.vertices[:, 0].astype(np.float32),
        "y": mesh.vertices[:, 1].astype(np.float32),
        "z": mesh.vertices[:, 2].astype(np.float32),
    }, mesh.triangles)
