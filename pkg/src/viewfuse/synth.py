"""Procedural synthetic indoor scenes with an exact ray-cast RGB-D renderer.

Scenes are built from axis-aligned primitives (rectangles, boxes, spheres)
whose ray intersections have closed forms, so rendered depth is exact and can
serve as an oracle in tests. Each primitive is one labeled instance; clutter
primitives carry the clutter class and rest on upward-facing surfaces.

``generate`` renders the same cameras twice, with and without clutter, so the
clean renders are per-pixel ground truth for everything the pipeline inpaints.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import CameraModel, DepthMap, look_at_pose
from .scene import Frame, LabeledMesh, RenderPair, SceneBundle

_EPS = 1e-9
_HULL_TOL = 1e-9


# ---------------------------------------------------------------------------
# scene specification


@dataclass(frozen=True)
class PrimitiveSpec:
    """One furniture or clutter primitive. ``size`` is (sx, sy, sz) for boxes
    and (radius,) for spheres. ``position`` is the (x, y) base center; None
    auto-places it."""

    kind: str = "box"
    size: tuple = (0.6, 0.6, 0.5)
    albedo: tuple = (0.7, 0.7, 0.7)
    position: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")


@dataclass(frozen=True)
class CameraRigSpec:
    count: int = 12
    width: int = 160
    height: int = 120
    fov_deg: float = 60.0
    distance: tuple = (2.0, 5.0)      # meters from the look-at target
    elevation: tuple = (0.3, 0.9)     # radians above horizontal
    lookat_jitter: float = 0.3


@dataclass(frozen=True)
class SceneSpec:
    room: tuple = (6.0, 5.0, 2.6)
    furniture: tuple = ()
    clutter: tuple = ()
    cameras: CameraRigSpec = field(default_factory=CameraRigSpec)
    seed: int = 0
    mesh_resolution: float = 0.05
    include_ceiling: bool = False
    wall_height: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        d = json.loads(text)
        d["furniture"] = tuple(PrimitiveSpec(**{**p, "size": tuple(p["size"]),
                                                "albedo": tuple(p.get("albedo", (0.7, 0.7, 0.7))),
                                                "position": None if p.get("position") is None else tuple(p["position"])})
                               for p in d.get("furniture", ()))
        d["clutter"] = tuple(PrimitiveSpec(**{**p, "size": tuple(p["size"]),
                                              "albedo": tuple(p.get("albedo", (0.7, 0.7, 0.7))),
                                              "position": None if p.get("position") is None else tuple(p["position"])})
                             for p in d.get("clutter", ()))
        if "cameras" in d:
            cam = dict(d["cameras"])
            for key in ("distance", "elevation"):
                if key in cam:
                    cam[key] = tuple(cam[key])
            d["cameras"] = CameraRigSpec(**cam)
        d["room"] = tuple(d.get("room", (6.0, 5.0, 2.6)))
        return cls(**d)


# ---------------------------------------------------------------------------
# primitives


@dataclass
class Rect:
    """Axis-aligned rectangle: ``axis`` is the normal axis, ``offset`` its
    coordinate; ``lo``/``hi`` bound the two remaining axes (in ascending axis
    order). Rendered double-sided."""

    axis: int
    offset: float
    lo: tuple
    hi: tuple
    albedo: np.ndarray
    instance_id: int
    clutter: bool

    def intersect(self, origin, dirs):
        d = dirs[:, self.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - origin[self.axis]) / d
        axes = [a for a in range(3) if a != self.axis]
        pa = origin[axes[0]] + t * dirs[:, axes[0]]
        pb = origin[axes[1]] + t * dirs[:, axes[1]]
        ok = (t > _EPS) & np.isfinite(t)
        ok &= (pa >= self.lo[0]) & (pa <= self.hi[0]) & (pb >= self.lo[1]) & (pb <= self.hi[1])
        return np.where(ok, t, np.inf)

    def normals(self, points, dirs):
        n = np.zeros_like(dirs)
        sign = np.where(dirs[:, self.axis] > 0, -1.0, 1.0)
        n[:, self.axis] = sign
        return n

    def tessellate(self, res):
        axes = [a for a in range(3) if a != self.axis]
        na = max(1, int(np.ceil((self.hi[0] - self.lo[0]) / res)))
        nb = max(1, int(np.ceil((self.hi[1] - self.lo[1]) / res)))
        a = np.linspace(self.lo[0], self.hi[0], na + 1)
        b = np.linspace(self.lo[1], self.hi[1], nb + 1)
        aa, bb = np.meshgrid(a, b, indexing="ij")
        verts = np.zeros((aa.size, 3))
        verts[:, self.axis] = self.offset
        verts[:, axes[0]] = aa.ravel()
        verts[:, axes[1]] = bb.ravel()
        idx = np.arange(aa.size).reshape(na + 1, nb + 1)
        q00 = idx[:-1, :-1].ravel()
        q01 = idx[:-1, 1:].ravel()
        q10 = idx[1:, :-1].ravel()
        q11 = idx[1:, 1:].ravel()
        tris = np.concatenate([np.stack([q00, q10, q11], axis=1),
                               np.stack([q00, q11, q01], axis=1)])
        return verts, tris


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    albedo: np.ndarray
    instance_id: int
    clutter: bool
    skip_bottom: bool = False  # omit the resting face from the mesh

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (self.lo[None, :] - origin[None, :]) / dirs
            t2 = (self.hi[None, :] - origin[None, :]) / dirs
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        ok = (tmax >= tmin) & (tmin > _EPS) & np.isfinite(tmin)
        return np.where(ok, tmin, np.inf)

    def normals(self, points, dirs):
        center = (self.lo + self.hi) / 2.0
        half = (self.hi - self.lo) / 2.0
        rel = (points - center) / half
        axis = np.argmax(np.abs(rel), axis=1)
        n = np.zeros_like(points)
        n[np.arange(len(points)), axis] = np.sign(rel[np.arange(len(points)), axis])
        return n

    def tessellate(self, res):
        verts_all, tris_all = [], []
        offset = 0
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            for side, coord in ((0, self.lo[axis]), (1, self.hi[axis])):
                if self.skip_bottom and axis == 2 and side == 0:
                    continue
                face = Rect(axis, coord, (self.lo[others[0]], self.lo[others[1]]),
                            (self.hi[others[0]], self.hi[others[1]]),
                            self.albedo, self.instance_id, self.clutter)
                v, t = face.tessellate(res)
                verts_all.append(v)
                tris_all.append(t + offset)
                offset += len(v)
        return np.concatenate(verts_all), np.concatenate(tris_all)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray
    instance_id: int
    clutter: bool

    def intersect(self, origin, dirs):
        oc = origin - self.center
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        t = np.where(t0 > _EPS, t0, t1)
        ok &= t > _EPS
        return np.where(ok, t, np.inf)

    def normals(self, points, dirs):
        n = (points - self.center) / self.radius
        flip = np.einsum("ij,ij->i", n, dirs) > 0
        n[flip] *= -1.0
        return n

    def tessellate(self, res):
        n_lat = max(3, int(np.ceil(np.pi * self.radius / res)))
        n_lon = max(4, int(np.ceil(2 * np.pi * self.radius / res)))
        lat = np.linspace(0.0, np.pi, n_lat + 1)[1:-1]
        lon = np.linspace(0.0, 2 * np.pi, n_lon, endpoint=False)
        ll, oo = np.meshgrid(lat, lon, indexing="ij")
        ring = np.stack([
            np.sin(ll) * np.cos(oo),
            np.sin(ll) * np.sin(oo),
            np.cos(ll),
        ], axis=-1).reshape(-1, 3)
        verts = np.concatenate([[[0.0, 0.0, 1.0]], ring, [[0.0, 0.0, -1.0]]])
        verts = self.center + self.radius * verts
        top, bottom = 0, len(verts) - 1

        def ring_idx(i, j):
            return 1 + i * n_lon + (j % n_lon)

        tris = []
        for j in range(n_lon):
            tris.append([top, ring_idx(0, j), ring_idx(0, j + 1)])
            tris.append([bottom, ring_idx(n_lat - 2, j + 1), ring_idx(n_lat - 2, j)])
        for i in range(n_lat - 2):
            for j in range(n_lon):
                a, b = ring_idx(i, j), ring_idx(i, j + 1)
                c, d = ring_idx(i + 1, j), ring_idx(i + 1, j + 1)
                tris.append([a, c, d])
                tris.append([a, d, b])
        return verts, np.asarray(tris, dtype=np.int64)


# ---------------------------------------------------------------------------
# rendering

_LIGHT = np.array([0.4, -0.3, -0.85])
_AMBIENT = 0.35
_BACKGROUND = 0.16


def render_view(prims, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast color and exact depth for one camera. Rays through pixel
    centers; depth is the camera-frame z of the nearest hit, 0 where no
    primitive is hit."""
    h, w = cam.height, cam.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    g = np.stack([(uu.ravel() - cam.cx) / cam.fx,
                  (vv.ravel() - cam.cy) / cam.fy,
                  np.ones(h * w)], axis=1)
    dirs = g @ cam.rotation.T
    origin = cam.position

    best_t = np.full(h * w, np.inf)
    best_prim = np.full(h * w, -1, dtype=np.int32)
    all_t = []
    for i, prim in enumerate(prims):
        t = prim.intersect(origin, dirs)
        all_t.append(t)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_prim[closer] = i

    light = _LIGHT / np.linalg.norm(_LIGHT)
    shade = np.full((h * w, 3), _BACKGROUND)
    for i, prim in enumerate(prims):
        sel = best_prim == i
        if not sel.any():
            continue
        pts = origin + all_t[i][sel, None] * dirs[sel]
        n = prim.normals(pts, dirs[sel])
        lam = np.maximum(0.0, -(n @ light))
        shade[sel] = np.asarray(prim.albedo)[None, :] * (_AMBIENT + (1 - _AMBIENT) * lam[:, None])

    color = np.clip(np.round(shade * 255.0), 0, 255).astype(np.uint8).reshape(h, w, 3)
    depth = np.where(best_prim >= 0, best_t, 0.0).reshape(h, w)
    return color, depth


def render_silhouette(prims, cam: CameraModel, instance_ids) -> np.ndarray:
    """Binary silhouette of the selected instances, ignoring all other
    geometry (no occlusion)."""
    selected = [p for p in prims if p.instance_id in set(instance_ids)]
    _, depth = render_view(selected, cam)
    return depth > 0


def tessellate_scene(prims, resolution: float) -> LabeledMesh:
    verts_all, tris_all, inst_all, clut_all, col_all = [], [], [], [], []
    offset = 0
    for prim in prims:
        v, t = prim.tessellate(resolution)
        verts_all.append(v)
        tris_all.append(np.asarray(t) + offset)
        inst_all.append(np.full(len(v), prim.instance_id, dtype=np.int32))
        clut_all.append(np.full(len(v), prim.clutter, dtype=bool))
        col_all.append(np.tile(np.clip(np.round(np.asarray(prim.albedo) * 255), 0, 255).astype(np.uint8), (len(v), 1)))
        offset += len(v)
    return LabeledMesh(
        vertices=np.concatenate(verts_all),
        triangles=np.concatenate(tris_all),
        instance_id=np.concatenate(inst_all),
        clutter=np.concatenate(clut_all),
        colors=np.concatenate(col_all),
    )


# ---------------------------------------------------------------------------
# scene assembly


def _room_prims(spec: SceneSpec, next_id) -> list:
    sx, sy, sz = spec.room
    wall_h = spec.wall_height if spec.wall_height is not None else sz
    prims = [Rect(2, 0.0, (0.0, 0.0), (sx, sy), np.array([0.62, 0.57, 0.50]), next_id(), False)]
    walls = [
        Rect(0, 0.0, (0.0, 0.0), (sy, wall_h), np.array([0.75, 0.73, 0.68]), next_id(), False),
        Rect(0, sx, (0.0, 0.0), (sy, wall_h), np.array([0.75, 0.73, 0.68]), next_id(), False),
        Rect(1, 0.0, (0.0, 0.0), (sx, wall_h), np.array([0.70, 0.72, 0.68]), next_id(), False),
        Rect(1, sy, (0.0, 0.0), (sx, wall_h), np.array([0.70, 0.72, 0.68]), next_id(), False),
    ]
    prims.extend(walls)
    if spec.include_ceiling:
        prims.append(Rect(2, sz, (0.0, 0.0), (sx, sy), np.array([0.8, 0.8, 0.8]), next_id(), False))
    return prims


def _place_box(pspec: PrimitiveSpec, base_z, rng, room, clutter, inst_id, support_bounds=None):
    sx, sy, sz = pspec.size
    if support_bounds is None:
        support_bounds = (0.0, 0.0, room[0], room[1])
    x0, y0, x1, y1 = support_bounds
    if pspec.position is not None:
        cx, cy = pspec.position[0], pspec.position[1]
    else:
        margin_x = min(sx / 2 + 0.05, (x1 - x0) / 2)
        margin_y = min(sy / 2 + 0.05, (y1 - y0) / 2)
        cx = rng.uniform(x0 + margin_x, x1 - margin_x)
        cy = rng.uniform(y0 + margin_y, y1 - margin_y)
    cx = float(np.clip(cx, sx / 2, room[0] - sx / 2))
    cy = float(np.clip(cy, sy / 2, room[1] - sy / 2))
    lo = np.array([cx - sx / 2, cy - sy / 2, base_z])
    hi = np.array([cx + sx / 2, cy + sy / 2, base_z + sz])
    return Box(lo, hi, np.asarray(pspec.albedo, dtype=np.float64), inst_id, clutter,
               skip_bottom=True)


def _place_sphere(pspec: PrimitiveSpec, base_z, rng, room, inst_id, support_bounds=None):
    r = pspec.size[0]
    if support_bounds is None:
        support_bounds = (0.0, 0.0, room[0], room[1])
    x0, y0, x1, y1 = support_bounds
    if pspec.position is not None:
        cx, cy = pspec.position[0], pspec.position[1]
    else:
        margin = min(r + 0.05, (x1 - x0) / 2)
        cx = rng.uniform(x0 + margin, x1 - margin)
        cy = rng.uniform(y0 + margin, y1 - margin)
    cx = float(np.clip(cx, r, room[0] - r))
    cy = float(np.clip(cy, r, room[1] - r))
    return Sphere(np.array([cx, cy, base_z + r]), r, np.asarray(pspec.albedo, dtype=np.float64),
                  inst_id, True)


def sample_cameras(spec: SceneSpec, rng) -> list[CameraModel]:
    rig = spec.cameras
    sx, sy, sz = spec.room
    fx = rig.width / (2.0 * np.tan(np.radians(rig.fov_deg) / 2.0))
    cams = []
    for k in range(rig.count):
        target = np.array([sx / 2, sy / 2, 0.7])
        target += rng.uniform(-rig.lookat_jitter, rig.lookat_jitter, size=3)
        az = 2 * np.pi * k / rig.count + rng.uniform(-0.2, 0.2)
        el = rng.uniform(*rig.elevation)
        dist = rng.uniform(*rig.distance)
        eye = target + dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        eye[0] = np.clip(eye[0], 0.2, sx - 0.2)
        eye[1] = np.clip(eye[1], 0.2, sy - 0.2)
        eye[2] = np.clip(eye[2], 0.5, sz - 0.1)
        pose = look_at_pose(eye, target)
        cams.append(CameraModel(fx=fx, fy=fx, cx=(rig.width - 1) / 2.0, cy=(rig.height - 1) / 2.0,
                                width=rig.width, height=rig.height, pose=pose))
    return cams


def build_scene(spec: SceneSpec):
    """Place all primitives and sample cameras. Returns
    ``(static_prims, clutter_prims, cameras)``; fully determined by the seed."""
    rng = np.random.default_rng(spec.seed)
    counter = iter(range(10_000))
    next_id = lambda: next(counter)

    static = _room_prims(spec, next_id)
    boxes = []
    for pspec in spec.furniture:
        prim = _place_box(pspec, 0.0, rng, spec.room, clutter=False, inst_id=next_id())
        static.append(prim)
        boxes.append(prim)

    clutter_prims = []
    for pspec in spec.clutter:
        if pspec.position is not None:
            # explicit placement: rest on whatever is underneath
            px, py = pspec.position[0], pspec.position[1]
            base_z, bounds = 0.0, (0.0, 0.0, spec.room[0], spec.room[1])
            for b in boxes:
                if b.lo[0] <= px <= b.hi[0] and b.lo[1] <= py <= b.hi[1]:
                    base_z, bounds = float(b.hi[2]), (b.lo[0], b.lo[1], b.hi[0], b.hi[1])
        else:
            # supports: the floor plus any furniture box top large enough
            supports = [((0.0, 0.0, spec.room[0], spec.room[1]), 0.0)]
            need = pspec.size[0] if pspec.kind == "sphere" else max(pspec.size[0], pspec.size[1]) / 2
            for b in boxes:
                if (b.hi[0] - b.lo[0]) > 2.2 * need and (b.hi[1] - b.lo[1]) > 2.2 * need:
                    supports.append(((b.lo[0], b.lo[1], b.hi[0], b.hi[1]), float(b.hi[2])))
            bounds, base_z = supports[int(rng.integers(len(supports)))]
        if pspec.kind == "box":
            clutter_prims.append(_place_box(pspec, base_z, rng, spec.room, clutter=True,
                                            inst_id=next_id(), support_bounds=bounds))
        else:
            clutter_prims.append(_place_sphere(pspec, base_z, rng, spec.room,
                                               inst_id=next_id(), support_bounds=bounds))

    cameras = sample_cameras(spec, rng)
    return static, clutter_prims, cameras


def generate(spec: SceneSpec) -> tuple[SceneBundle, SceneBundle]:
    """Render the cluttered and clean bundles with identical cameras.

    The clean renders are attached to the cluttered bundle as per-view ground
    truth; frame masks start empty (mask projection fills them).
    """
    static, clutter_prims, cameras = build_scene(spec)
    if not cameras:
        raise ValueError("scene spec has zero cameras")
    cluttered_prims = static + clutter_prims

    cluttered_mesh = tessellate_scene(cluttered_prims, spec.mesh_resolution)
    clean_mesh = tessellate_scene(static, spec.mesh_resolution)

    frames, clean_frames, clean_renders = [], [], []
    for i, cam in enumerate(cameras):
        color, depth = render_view(cluttered_prims, cam)
        frames.append(Frame(color=color, captured_depth=DepthMap(depth),
                            mask=np.zeros(depth.shape, dtype=bool), camera=cam, id=i))
        c_color, c_depth = render_view(static, cam)
        clean_renders.append(RenderPair(color=c_color, depth=DepthMap(c_depth)))
        clean_frames.append(Frame(color=c_color, captured_depth=DepthMap(c_depth),
                                  mask=np.zeros(c_depth.shape, dtype=bool), camera=cam, id=i))

    cluttered = SceneBundle(frames=frames, mesh=cluttered_mesh, clean_renders=clean_renders)
    clean = SceneBundle(frames=clean_frames, mesh=clean_mesh, clean_renders=None)
    return cluttered, clean


def carve_holes(mesh: LabeledMesh, clutter_mesh: LabeledMesh) -> LabeledMesh:
    """Delete triangles whose centroid falls inside the convex hull of any
    clutter instance of ``clutter_mesh``."""
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    remove = np.zeros(len(centroids), dtype=bool)
    for inst in np.unique(clutter_mesh.instance_id[clutter_mesh.clutter]):
        pts = clutter_mesh.vertices[clutter_mesh.instance_id == inst]
        if len(pts) < 4:
            continue
        hull = ConvexHull(pts)
        # equations: A @ x + b <= 0 inside (outward normals)
        inside = (centroids @ hull.equations[:, :3].T + hull.equations[:, 3]).max(axis=1) <= _HULL_TOL
        remove |= inside

    keep_tris = mesh.triangles[~remove]
    used = np.zeros(mesh.n_vertices, dtype=bool)
    if keep_tris.size:
        used[keep_tris.ravel()] = True
    new_index = np.full(mesh.n_vertices, -1, dtype=np.int64)
    new_index[used] = np.arange(int(used.sum()))
    return LabeledMesh(
        vertices=mesh.vertices[used],
        triangles=new_index[keep_tris] if keep_tris.size else np.zeros((0, 3), dtype=np.int32),
        instance_id=mesh.instance_id[used],
        clutter=mesh.clutter[used],
        colors=None if mesh.colors is None else mesh.colors[used],
    )


# ---------------------------------------------------------------------------
# adversarial depth completions for consistency benchmarking


@dataclass(frozen=True)
class CorruptionSpec:
    """Error mix injected into first-iteration depth completions, as coherent
    blobs inside the holes.

    ``front`` blobs land in front of the captured surface (caught by the
    per-pixel prune). ``floating`` blobs sit a few centimeters in front of
    the honest fill, i.e. in free space that other views observe directly
    (caught by cross-frame pruning). ``offset`` blobs sit behind the honest
    fill by a per-view amount spaced wider than the voting threshold (caught
    only by voting).
    """

    seed: int = 0
    front_fraction: float = 0.15
    floating_fraction: float = 0.15
    offset_fraction: float = 0.15
    blob_radius: tuple = (2, 5)
    floating_range: tuple = (0.05, 0.12)
    offset_base: float = 0.12
    offset_step: float = 0.08


def _grow_blobs(rng, holes: np.ndarray, budget: int, radii: tuple, taken: np.ndarray) -> np.ndarray:
    """Union of random discs centered on hole pixels, about ``budget`` pixels
    large, avoiding already-taken pixels."""
    hv, hu = np.nonzero(holes & ~taken)
    blob = np.zeros_like(holes)
    if hv.size == 0 or budget <= 0:
        return blob
    vv, uu = np.meshgrid(np.arange(holes.shape[0]), np.arange(holes.shape[1]), indexing="ij")
    covered = 0
    for _ in range(64):
        if covered >= budget:
            break
        k = int(rng.integers(hv.size))
        r = int(rng.integers(radii[0], radii[1] + 1))
        disc = (vv - hv[k]) ** 2 + (uu - hu[k]) ** 2 <= r * r
        add = disc & holes & ~taken & ~blob
        blob |= add
        covered += int(add.sum())
    return blob


def corrupting_depth_backend(base_backend, corruption: CorruptionSpec):
    """Wrap a depth backend so its first-iteration output carries injected
    inconsistencies; re-inpainting requests (iteration >= 1) pass through."""

    def backend(req):
        fill = base_backend(req)
        if req.iteration > 0 or req.captured_depth is None:
            return fill
        holes = req.hole_mask & (req.captured_depth > 0) & (fill > 0)
        n_holes = int(holes.sum())
        if n_holes == 0:
            return fill
        rng = np.random.default_rng((corruption.seed, int(req.frame_id)))
        out = fill.copy()
        cap = req.captured_depth

        c = corruption
        taken = np.zeros_like(holes)
        front = _grow_blobs(rng, holes, int(c.front_fraction * n_holes), c.blob_radius, taken)
        taken |= front
        floating = _grow_blobs(rng, holes, int(c.floating_fraction * n_holes), c.blob_radius, taken)
        taken |= floating
        offset = _grow_blobs(rng, holes, int(c.offset_fraction * n_holes), c.blob_radius, taken)

        out[front] = 0.6 * cap[front]

        delta = rng.uniform(*c.floating_range)
        # carve out only where the moved point stays behind the capture
        room = floating & (out - cap > delta + 0.05)
        out[room] = out[room] - delta

        view_offset = c.offset_base + c.offset_step * int(req.frame_id)
        out[offset] = out[offset] + view_offset
        return out

    return backend
