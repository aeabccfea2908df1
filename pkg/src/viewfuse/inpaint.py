"""Pluggable color inpainting and depth completion backends.

Built-ins are deterministic: ``diffusion_color`` fills holes by iterated
neighborhood averaging from the hole boundary; ``planefit_depth`` segments the
guidance image around each hole by color quantization, RANSAC-fits a plane to
the surrounding valid depth per segment, and evaluates it along pixel rays.
``oracle`` returns stored ground-truth renders. ``external`` shells out to a
user command (see README for the file/env contract).

Backends never touch non-hole pixels.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import BackendError, DimensionMismatchError, UnfillableHoleError
from .geometry import CameraModel
from .scene import load_color_png, load_depth_vfd, save_color_png, save_depth_vfd, save_mask_png

COLOR_KINDS = ("diffusion_color", "oracle", "external")
DEPTH_KINDS = ("planefit_depth", "oracle", "external")

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass
class InpaintRequest:
    """One frame's inpainting work order.

    ``depth`` carries 0 inside holes; ``captured_depth`` is the original
    capture (clutter included), available to backends that reason about it.
    ``guidance`` is the already-inpainted color used by guided depth backends.
    ``iteration`` counts refinement rounds, starting at 0.
    """

    color: np.ndarray
    depth: np.ndarray
    hole_mask: np.ndarray
    guidance: np.ndarray | None = None
    camera: CameraModel | None = None
    captured_depth: np.ndarray | None = None
    clean_color: np.ndarray | None = None
    clean_depth: np.ndarray | None = None
    frame_id: int = -1
    iteration: int = 0

    def __post_init__(self):
        self.hole_mask = np.asarray(self.hole_mask).astype(bool)
        if self.color.shape[:2] != self.hole_mask.shape or self.depth.shape != self.hole_mask.shape:
            raise DimensionMismatchError("inpaint request arrays disagree in size")


@dataclass
class BackendSpec:
    """Backend selector: kind plus free-form parameters.

    ``external`` requires ``params['command']``, a shell template invoked with
    VF_IN_COLOR / VF_IN_DEPTH / VF_IN_MASK / VF_OUT in its environment.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "external" and "command" not in self.params:
            raise ValueError("external backend requires a 'command' template")


def resolve_color_backend(spec):
    """Accept a BackendSpec or a callable; return ``f(request) -> color``."""
    if callable(spec):
        return spec
    if spec.kind not in COLOR_KINDS:
        raise ValueError(f"unknown color backend {spec.kind!r} (expected one of {COLOR_KINDS})")
    return lambda req: inpaint_color(req, spec)


def resolve_depth_backend(spec):
    if callable(spec):
        return spec
    if spec.kind not in DEPTH_KINDS:
        raise ValueError(f"unknown depth backend {spec.kind!r} (expected one of {DEPTH_KINDS})")
    return lambda req: complete_depth(req, spec)


# ---------------------------------------------------------------------------
# color


def inpaint_color(req: InpaintRequest, spec: BackendSpec) -> np.ndarray:
    if not req.hole_mask.any():
        return req.color.copy()
    if spec.kind == "diffusion_color":
        return _diffuse_color(req.color, req.hole_mask,
                              max_iterations=int(spec.params.get("iterations", 4000)))
    if spec.kind == "oracle":
        if req.clean_color is None:
            raise BackendError("oracle color backend needs clean_color on the request")
        out = req.color.copy()
        out[req.hole_mask] = req.clean_color[req.hole_mask]
        return out
    if spec.kind == "external":
        out = _run_external(req, spec, want="color")
        result = req.color.copy()
        result[req.hole_mask] = out[req.hole_mask]
        return result
    raise ValueError(f"unknown color backend {spec.kind!r}")


def _diffuse_scalar(values: np.ndarray, holes: np.ndarray, known: np.ndarray,
                    tol: float, max_iterations: int) -> np.ndarray:
    """Jacobi diffusion over the hole pixels; neighbors contribute when they
    are known boundary values or other hole pixels (current estimate). Pixels
    that are neither known nor holes are ignored. Deterministic."""
    if not known.any() or not holes.any():
        return values.copy()
    work = values.astype(np.float64).copy()
    # nearest-known initialization speeds convergence without moving the fixed point
    _, (iv, iu) = ndimage.distance_transform_edt(~known, return_indices=True)
    work[holes] = work[iv[holes], iu[holes]]
    participates = known | holes
    hv, hu = np.nonzero(holes)
    h, w = values.shape

    nbr_idx, nbr_ok = [], []
    for dv, du in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nv, nu = hv + dv, hu + du
        ok = (nv >= 0) & (nv < h) & (nu >= 0) & (nu < w)
        ok[ok] = participates[nv[ok], nu[ok]]
        nbr_idx.append(np.where(ok, np.clip(nv, 0, h - 1) * w + np.clip(nu, 0, w - 1), 0))
        nbr_ok.append(ok)
    n_nbrs = sum(ok.astype(np.int64) for ok in nbr_ok)
    cnt = np.maximum(n_nbrs, 1)
    isolated = n_nbrs == 0
    hole_flat = hv * w + hu

    flat = work.ravel()
    for _ in range(max_iterations):
        acc = np.zeros(hv.size)
        for idx, ok in zip(nbr_idx, nbr_ok):
            acc += np.where(ok, flat[idx], 0.0)
        new = np.where(isolated, flat[hole_flat], acc / cnt)
        delta = np.abs(new - flat[hole_flat]).max()
        flat[hole_flat] = new
        if delta < tol:
            break
    return flat.reshape(h, w)


def _diffuse_color(color: np.ndarray, holes: np.ndarray, max_iterations: int) -> np.ndarray:
    out = color.astype(np.float64)
    for ch in range(3):
        out[..., ch] = _diffuse_scalar(out[..., ch], holes, known=~holes,
                                       tol=1.0 / 255.0, max_iterations=max_iterations)
    result = color.copy()
    result[holes] = np.clip(np.round(out[holes]), 0, 255).astype(np.uint8)
    return result


# ---------------------------------------------------------------------------
# depth


def complete_depth(req: InpaintRequest, spec: BackendSpec) -> np.ndarray:
    if not req.hole_mask.any():
        return req.depth.copy()
    if spec.kind == "planefit_depth":
        return _planefit_depth(req, spec)
    if spec.kind == "oracle":
        if req.clean_depth is None:
            raise BackendError("oracle depth backend needs clean_depth on the request")
        out = req.depth.copy()
        out[req.hole_mask] = req.clean_depth[req.hole_mask]
        return out
    if spec.kind == "external":
        out = _run_external(req, spec, want="depth")
        result = req.depth.copy()
        result[req.hole_mask] = out[req.hole_mask]
        return result
    raise ValueError(f"unknown depth backend {spec.kind!r}")


def _quantize_colors(image: np.ndarray, levels: int) -> np.ndarray:
    q = (image.astype(np.int64) * levels) // 256
    return q[..., 0] * levels * levels + q[..., 1] * levels + q[..., 2]


def _lsq_plane(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[2]
    return np.array([normal[0], normal[1], normal[2], normal @ centroid])


def _plane_residuals(plane: np.ndarray, points: np.ndarray) -> np.ndarray:
    return np.abs(points @ plane[:3] - plane[3])


def _ransac_plane(points: np.ndarray, threshold: float, iterations: int, rng) -> np.ndarray | None:
    """Fit n . x = d; returns (nx, ny, nz, d) or None. Hypotheses are sampled
    in one batch; the best inlier set gets a least-squares refit. When a plain
    least-squares plane already fits every point the sampling is skipped."""
    n_pts = len(points)
    if n_pts < 3:
        return None
    lsq = _lsq_plane(points)
    if _plane_residuals(lsq, points).max() < threshold:
        return lsq

    picks = rng.integers(0, n_pts, size=(iterations, 3))
    p0 = points[picks[:, 0]]
    e1 = points[picks[:, 1]] - p0
    e2 = points[picks[:, 2]] - p0
    nx = e1[:, 1] * e2[:, 2] - e1[:, 2] * e2[:, 1]
    ny = e1[:, 2] * e2[:, 0] - e1[:, 0] * e2[:, 2]
    nz = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    normals = np.stack([nx, ny, nz], axis=1)
    lengths = np.linalg.norm(normals, axis=1)
    good = lengths > 1e-12
    if not good.any():
        return None
    normals = normals[good] / lengths[good][:, None]
    offsets = np.einsum("ij,ij->i", normals, p0[good])
    dist = np.abs(points @ normals.T - offsets[None, :])
    counts = (dist < threshold).sum(axis=0)
    best = int(np.argmax(counts))
    if counts[best] < 3:
        return None
    inliers = dist[:, best] < threshold
    return _lsq_plane(points[inliers])


def _planefit_depth(req: InpaintRequest, spec: BackendSpec) -> np.ndarray:
    if req.camera is None:
        raise BackendError("planefit_depth needs the camera on the request")
    guidance = req.guidance if req.guidance is not None else req.color
    threshold = float(spec.params.get("ransac_threshold", 0.01))
    iterations = int(spec.params.get("ransac_iterations", 200))
    band_px = int(spec.params.get("band", 50))
    levels = int(spec.params.get("color_levels", 8))
    seed = int(spec.params.get("seed", 0))

    cam = req.camera
    h, w = req.depth.shape
    out = req.depth.copy()
    valid = req.depth > 0
    labels_q = _quantize_colors(guidance, levels)

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    gx = (uu - cam.cx) / cam.fx
    gy = (vv - cam.cy) / cam.fy

    hole_labels, n_regions = ndimage.label(req.hole_mask, structure=_CROSS)
    for region in range(1, n_regions + 1):
        region_mask = hole_labels == region
        dist = ndimage.distance_transform_cdt(~region_mask, metric="taxicab")
        ring = (dist <= band_px) & ~req.hole_mask & valid
        if not ring.any():
            raise UnfillableHoleError(
                f"frame {req.frame_id}: hole region {region} has no valid depth within {band_px} px"
            )
        # hole content is revealed background, so it cannot leave the depth
        # envelope of the surroundings; plane extrapolation can, diffusion not
        ring_depths = req.depth[ring]
        env_lo = float(ring_depths.min()) - 0.1
        env_hi = float(ring_depths.max()) + 0.1

        filled = np.zeros(h * w, dtype=bool)
        for color_key in np.unique(labels_q[region_mask]):
            seg_holes = region_mask & (labels_q == color_key)
            seg_ring = ring & (labels_q == color_key)
            if seg_ring.sum() < 3:
                continue
            rv, ru = np.nonzero(seg_ring)
            z = req.depth[rv, ru]
            pts = np.stack([gx[rv, ru] * z, gy[rv, ru] * z, z], axis=1)
            rng = np.random.default_rng((seed, int(req.frame_id), int(region), int(color_key)))
            plane = _ransac_plane(pts, threshold, iterations, rng)
            if plane is None:
                continue
            nx, ny, nz, d = plane
            tv, tu = np.nonzero(seg_holes)
            denom = nx * gx[tv, tu] + ny * gy[tv, tu] + nz
            with np.errstate(divide="ignore", invalid="ignore"):
                z_new = d / denom
            ok = np.isfinite(z_new) & (z_new >= env_lo) & (z_new <= env_hi) & (z_new > 0)
            out[tv[ok], tu[ok]] = z_new[ok]
            filled[tv[ok] * w + tu[ok]] = True
        # wherever segmentation or fitting failed, diffuse from the boundary
        leftovers = region_mask & ~filled.reshape(h, w)
        if leftovers.any():
            known = (out > 0) & ~leftovers
            diffused = _diffuse_scalar(out, leftovers, known, tol=1e-5, max_iterations=4000)
            out[leftovers] = np.maximum(diffused[leftovers], 1e-6)
    return out


# ---------------------------------------------------------------------------
# external process adapter


def _run_external(req: InpaintRequest, spec: BackendSpec, want: str) -> np.ndarray:
    command = spec.params["command"]
    with tempfile.TemporaryDirectory(prefix="viewfuse_ext_") as tmp:
        color_path = os.path.join(tmp, "color.png")
        depth_path = os.path.join(tmp, "depth.vfd")
        mask_path = os.path.join(tmp, "mask.png")
        out_path = os.path.join(tmp, "out.png" if want == "color" else "out.vfd")
        save_color_png(color_path, req.color)
        save_depth_vfd(depth_path, req.depth)
        save_mask_png(mask_path, req.hole_mask)
        env = dict(os.environ)
        env.update({"VF_IN_COLOR": color_path, "VF_IN_DEPTH": depth_path,
                    "VF_IN_MASK": mask_path, "VF_OUT": out_path})
        proc = subprocess.run(command, shell=True, env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            raise BackendError(
                f"external backend exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if not os.path.exists(out_path):
            raise BackendError(f"external backend produced no output at {out_path}")
        if want == "color":
            out = load_color_png(out_path)
            if out.shape != req.color.shape:
                raise BackendError(f"external color output is {out.shape}, expected {req.color.shape}")
        else:
            out = load_depth_vfd(out_path).values
            if out.shape != req.depth.shape:
                raise BackendError(f"external depth output is {out.shape}, expected {req.depth.shape}")
        return out


# ---------------------------------------------------------------------------
# synthetic supervision masks


def synth_training_masks(depth: np.ndarray, own_mask: np.ndarray, other_mask: np.ndarray):
    """Build a supervised depth-completion pair by pasting another view's
    clutter mask onto this depth map.

    Pixels already clutter here are never masked, so a model trained on these
    pairs never has to hallucinate removed objects. Returns
    ``(masked_depth, target_depth, training_mask)`` with
    ``training_mask = other_mask minus own_mask``.
    """
    own_mask = np.asarray(own_mask).astype(bool)
    other_mask = np.asarray(other_mask).astype(bool)
    if own_mask.shape != other_mask.shape or depth.shape != own_mask.shape:
        raise DimensionMismatchError("mask/depth sizes disagree")
    training_mask = other_mask & ~own_mask
    masked = np.asarray(depth, dtype=np.float64).copy()
    masked[training_mask] = 0.0
    return masked, np.asarray(depth, dtype=np.float64).copy(), training_mask


def sample_training_pairs(n_frames: int, seed: int = 0) -> list[tuple[int, int]]:
    """For each frame pick a random other frame whose mask gets pasted on."""
    rng = np.random.default_rng(seed)
    pairs = []
    for a in range(n_frames):
        if n_frames == 1:
            pairs.append((a, a))
            continue
        b = int(rng.integers(n_frames - 1))
        if b >= a:
            b += 1
        pairs.append((a, b))
    return pairs
