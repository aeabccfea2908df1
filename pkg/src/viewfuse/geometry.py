"""Pinhole camera math: projection, unprojection, and depth warping between views.

Conventions used everywhere in this package:

* Camera frame: +x right, +y down, +z forward (optical axis). Depth is the
  camera-frame z coordinate in meters and is strictly positive for visible
  points.
* Pixels: ``(u, v)`` with ``u`` the column and ``v`` the row; pixel centers sit
  at integer coordinates, so pixel ``(u, v)`` covers ``[u-0.5, u+0.5)``.
* Depth maps: float arrays indexed ``[v, u]``; the value 0 is the unique
  invalid/empty sentinel.
* Poses: 4x4 rigid camera-to-world transforms.

Warping splats each valid source pixel onto the nearest destination pixel and
resolves collisions with a z-buffer (keep the smallest destination depth).
The warp arithmetic is written out componentwise rather than with matrix
products so that results are bit-reproducible across BLAS builds and match a
scalar reference evaluation exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidDepthError

_ROT_TOL = 1e-6


def as_depth_values(depth) -> np.ndarray:
    """Accept a DepthMap or a bare array and return the float64 value array."""
    values = getattr(depth, "values", depth)
    return np.asarray(values, dtype=np.float64)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid camera-to-world pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray  # 4x4 camera-to-world

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")
        if self.pose.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {self.pose.shape}")
        if not np.allclose(self.pose[3], [0.0, 0.0, 0.0, 1.0], atol=_ROT_TOL):
            raise ValueError("pose last row must be [0, 0, 0, 1]")
        r = self.pose[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=_ROT_TOL):
            raise ValueError("pose rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ROT_TOL:
            raise ValueError("pose rotation block must have determinant +1 (no reflection)")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "pose": [float(x) for x in self.pose.reshape(-1)],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraModel":
        pose = np.asarray(d["pose"], dtype=np.float64).reshape(4, 4)
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]), pose=pose,
        )


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth in meters; 0 marks empty/invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("depth map contains non-finite values")
        if np.any(values < 0):
            raise ValueError("depth map contains negative values")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0


def unproject(cam: CameraModel, pixel, depth: float) -> np.ndarray:
    """Lift a pixel at the given metric depth to a 3-D point in world coordinates."""
    if not np.isfinite(depth) or depth <= 0:
        raise InvalidDepthError(f"cannot unproject depth {depth}; must be finite and > 0")
    u, v = float(pixel[0]), float(pixel[1])
    if not (-0.5 <= u < cam.width - 0.5 and -0.5 <= v < cam.height - 0.5):
        raise ValueError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    x = (u - cam.cx) * depth / cam.fx
    y = (v - cam.cy) * depth / cam.fy
    p_cam = np.array([x, y, depth])
    return cam.rotation @ p_cam + cam.position


def project(cam: CameraModel, point_world) -> tuple[tuple[float, float], float]:
    """Project a world point; returns ``((u, v), depth)``.

    Raises InvalidDepthError for points at or behind the camera plane.
    """
    p = np.asarray(point_world, dtype=np.float64)
    p_cam = cam.rotation.T @ (p - cam.position)
    z = p_cam[2]
    if z <= 0:
        raise InvalidDepthError("point is behind the camera")
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    return (u, v), z


def warp_pixels(us, vs, ds, src_cam: CameraModel, dst_cam: CameraModel):
    """Map source pixels with depths into the destination image.

    Returns ``(u2, v2, z2, in_front)`` where ``(u2, v2)`` are continuous
    destination coordinates, ``z2`` the destination-frame depth and
    ``in_front`` flags points with positive destination depth. Written
    componentwise so a scalar re-evaluation reproduces the floats exactly.
    """
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)

    rs, ts = src_cam.rotation, src_cam.position
    x = (us - src_cam.cx) * ds / src_cam.fx
    y = (vs - src_cam.cy) * ds / src_cam.fy
    z = ds
    wx = rs[0, 0] * x + rs[0, 1] * y + rs[0, 2] * z + ts[0]
    wy = rs[1, 0] * x + rs[1, 1] * y + rs[1, 2] * z + ts[1]
    wz = rs[2, 0] * x + rs[2, 1] * y + rs[2, 2] * z + ts[2]

    rd, td = dst_cam.rotation, dst_cam.position
    dx = wx - td[0]
    dy = wy - td[1]
    dz = wz - td[2]
    x2 = rd[0, 0] * dx + rd[1, 0] * dy + rd[2, 0] * dz
    y2 = rd[0, 1] * dx + rd[1, 1] * dy + rd[2, 1] * dz
    z2 = rd[0, 2] * dx + rd[1, 2] * dy + rd[2, 2] * dz

    in_front = z2 > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u2 = dst_cam.fx * x2 / z2 + dst_cam.cx
        v2 = dst_cam.fy * y2 / z2 + dst_cam.cy
    return u2, v2, z2, in_front


def nearest_pixel(coords) -> np.ndarray:
    """Round continuous pixel coordinates to the nearest integer pixel.

    Uses floor(x + 0.5) so that halfway cases resolve identically everywhere
    (no banker's rounding).
    """
    return np.floor(np.asarray(coords) + 0.5).astype(np.int64)


@dataclass
class WarpResult:
    """Depth of one view splatted into another camera.

    ``depth`` holds the destination-frame depth (z-buffered, 0 where nothing
    landed); ``src_depth`` the originating source depth of the winning splat;
    ``src_pixel`` the flat source pixel index of the winner (-1 where empty).
    ``dropped_behind`` counts source pixels discarded for landing behind the
    destination camera.
    """

    depth: np.ndarray
    src_depth: np.ndarray
    src_pixel: np.ndarray
    dropped_behind: int = 0


def warp_depth(depth, src_cam: CameraModel, dst_cam: CameraModel) -> WarpResult:
    """Warp a source depth map into the destination camera (forward splat).

    Collisions keep the smallest destination depth; ties resolve to the
    smallest flat source index, so the result does not depend on evaluation
    order.
    """
    d = as_depth_values(depth)
    if d.shape != (src_cam.height, src_cam.width):
        raise DimensionMismatchError(
            f"depth map is {d.shape[1]}x{d.shape[0]} but source camera expects "
            f"{src_cam.width}x{src_cam.height}"
        )
    h, w = dst_cam.height, dst_cam.width
    out_depth = np.zeros((h, w), dtype=np.float64)
    out_src_depth = np.zeros((h, w), dtype=np.float64)
    out_src_pixel = np.full((h, w), -1, dtype=np.int64)

    valid = d > 0
    if not valid.any():
        return WarpResult(out_depth, out_src_depth, out_src_pixel)

    vv, uu = np.nonzero(valid)
    ds = d[vv, uu]
    u2, v2, z2, in_front = warp_pixels(uu.astype(np.float64), vv.astype(np.float64), ds, src_cam, dst_cam)
    dropped_behind = int(np.count_nonzero(~in_front))

    ui = nearest_pixel(np.where(in_front, u2, -1.0))
    vi = nearest_pixel(np.where(in_front, v2, -1.0))
    keep = in_front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    if not keep.any():
        return WarpResult(out_depth, out_src_depth, out_src_pixel, dropped_behind)

    src_flat = (vv * src_cam.width + uu)[keep]
    land = (vi[keep] * w + ui[keep]).astype(np.int64)
    z = z2[keep]
    src_d = ds[keep]

    order = np.lexsort((src_flat, z, land))
    land_sorted = land[order]
    first = np.ones(land_sorted.size, dtype=bool)
    first[1:] = land_sorted[1:] != land_sorted[:-1]
    sel = order[first]

    out_depth.flat[land[sel]] = z[sel]
    out_src_depth.flat[land[sel]] = src_d[sel]
    out_src_pixel.flat[land[sel]] = src_flat[sel]
    return WarpResult(out_depth, out_src_depth, out_src_pixel, dropped_behind)


def warp_all_pairs(depths, cameras, threads: int | None = None) -> dict[tuple[int, int], WarpResult]:
    """Warp every view into every other view; returns ``{(s, t): WarpResult}``.

    One task per ordered pair; tasks share no mutable state, so results are
    identical for any thread count.
    """
    depths = [as_depth_values(d) for d in depths]
    if len(depths) != len(cameras):
        raise DimensionMismatchError(f"{len(depths)} depth maps but {len(cameras)} cameras")
    n = len(depths)
    pairs = [(s, t) for s in range(n) for t in range(n) if s != t]

    def run_pair(pair):
        s, t = pair
        try:
            return pair, warp_depth(depths[s], cameras[s], cameras[t])
        except DimensionMismatchError as exc:
            raise DimensionMismatchError(f"warp pair ({s}, {t}): {exc}") from exc

    results: dict[tuple[int, int], WarpResult] = {}
    if threads is not None and threads <= 1:
        for pair in pairs:
            key, res = run_pair(pair)
            results[key] = res
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for key, res in pool.map(run_pair, pairs):
                results[key] = res
    return results


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose for a camera at ``eye`` looking at ``target``.

    Uses the y-down camera convention; ``up`` is the world up direction used
    to fix roll. Falls back to +y world up when the view direction is
    (anti)parallel to ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = eye
    return pose
