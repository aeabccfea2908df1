"""Z-buffer triangle rasterization used for mask projection.

Pixel centers sit at integer coordinates; a pixel belongs to a triangle when
its center lies inside (edges inclusive) the projected triangle. Depth is
interpolated perspective-correctly (linear in 1/z), which for a planar
triangle equals the exact ray intersection depth. Triangles with any vertex at
or behind the near plane are skipped; no clipping is performed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel

_NEAR = 1e-6
_PAIR_CHUNK = 4_000_000


@dataclass
class RasterResult:
    depth: np.ndarray   # H x W float64, 0 where nothing was drawn
    value: np.ndarray   # H x W int32, per-pixel triangle attribute, -1 where empty


def rasterize_mesh(vertices: np.ndarray, triangles: np.ndarray, cam: CameraModel,
                   tri_values: np.ndarray | None = None) -> RasterResult:
    """Rasterize a triangle mesh into the camera; ``tri_values`` is an optional
    int attribute per triangle carried to the winning pixel (default: triangle
    index)."""
    h, w = cam.height, cam.width
    depth_buf = np.full((h, w), np.inf)
    value_buf = np.full((h, w), -1, dtype=np.int32)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if tri_values is None:
        tri_values = np.arange(len(triangles), dtype=np.int32)
    else:
        tri_values = np.asarray(tri_values, dtype=np.int32)

    if len(triangles) == 0 or len(vertices) == 0:
        return RasterResult(np.zeros((h, w)), value_buf)

    v_cam = (np.asarray(vertices, dtype=np.float64) - cam.position) @ cam.rotation
    z = v_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * v_cam[:, 0] / z + cam.cx
        v = cam.fy * v_cam[:, 1] / z + cam.cy

    front = z > _NEAR
    tri_ok = front[triangles].all(axis=1)
    triangles = triangles[tri_ok]
    tri_values = tri_values[tri_ok]
    if len(triangles) == 0:
        return RasterResult(np.zeros((h, w)), value_buf)

    tu = u[triangles]          # T x 3
    tv = v[triangles]
    tz = z[triangles]
    lo_u = np.maximum(np.ceil(tu.min(axis=1)), 0).astype(np.int64)
    hi_u = np.minimum(np.floor(tu.max(axis=1)), w - 1).astype(np.int64)
    lo_v = np.maximum(np.ceil(tv.min(axis=1)), 0).astype(np.int64)
    hi_v = np.minimum(np.floor(tv.max(axis=1)), h - 1).astype(np.int64)
    nu = np.maximum(hi_u - lo_u + 1, 0)
    nv = np.maximum(hi_v - lo_v + 1, 0)
    counts = nu * nv
    keep = counts > 0
    idx_all = np.nonzero(keep)[0]
    if idx_all.size == 0:
        return RasterResult(np.zeros((h, w)), value_buf)

    # chunk triangles so the expanded (triangle, pixel) pair list stays bounded
    csum = np.cumsum(counts[idx_all])
    bounds = [0]
    while bounds[-1] < idx_all.size:
        target = csum[bounds[-1] - 1] + _PAIR_CHUNK if bounds[-1] else _PAIR_CHUNK
        nxt = int(np.searchsorted(csum, target)) + 1
        bounds.append(min(max(nxt, bounds[-1] + 1), idx_all.size))

    for b0, b1 in zip(bounds[:-1], bounds[1:]):
        tri_idx = idx_all[b0:b1]
        n_pix = counts[tri_idx]
        total = int(n_pix.sum())
        owner = np.repeat(np.arange(tri_idx.size), n_pix)
        offsets = np.concatenate(([0], np.cumsum(n_pix)[:-1]))
        local = np.arange(total) - offsets[owner]
        width_u = nu[tri_idx][owner]
        px = lo_u[tri_idx][owner] + local % width_u
        py = lo_v[tri_idx][owner] + local // width_u

        t = tri_idx[owner]
        x0, x1, x2 = tu[t, 0], tu[t, 1], tu[t, 2]
        y0, y1, y2 = tv[t, 0], tv[t, 1], tv[t, 2]
        fx, fy = px.astype(np.float64), py.astype(np.float64)
        w0 = (x2 - x1) * (fy - y1) - (y2 - y1) * (fx - x1)
        w1 = (x0 - x2) * (fy - y2) - (y0 - y2) * (fx - x2)
        w2 = (x1 - x0) * (fy - y0) - (y1 - y0) * (fx - x0)
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        inside = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
        inside &= area != 0
        if not inside.any():
            continue

        t = t[inside]
        w0, w1, w2, area = w0[inside], w1[inside], w2[inside], area[inside]
        inv_z = (w0 / tz[t, 0] + w1 / tz[t, 1] + w2 / tz[t, 2]) / area
        good = inv_z > 0
        if not good.any():
            continue
        zi = 1.0 / inv_z[good]
        t = t[good]
        flat = (py[inside][good] * w + px[inside][good]).astype(np.int64)

        # per-chunk z-buffer: order by (pixel, depth, triangle) and keep firsts
        order = np.lexsort((t, zi, flat))
        flat_s = flat[order]
        first = np.ones(flat_s.size, dtype=bool)
        first[1:] = flat_s[1:] != flat_s[:-1]
        sel = order[first]
        better = zi[sel] < depth_buf.flat[flat[sel]]
        sel = sel[better]
        depth_buf.flat[flat[sel]] = zi[sel]
        value_buf.flat[flat[sel]] = tri_values[t[sel]]

    depth = np.where(np.isfinite(depth_buf), depth_buf, 0.0)
    return RasterResult(depth, value_buf)
