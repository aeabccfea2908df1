"""Scene data model and on-disk bundle serialization.

Bundle layout::

    bundle/
      cameras/%06d.json        intrinsics + 4x4 row-major camera-to-world pose
      color/%06d.png           8-bit RGB
      depth/%06d.png|.vfd      16-bit grayscale PNG in millimeters, or float32
                               VFD container (lossless, used by synthetic data)
      mask/%06d.png            8-bit clutter mask, 0/255
      mesh.ply                 labeled mesh (instance_id:int32, clutter:uchar)
      clean/color/%06d.png     optional ground-truth clean renders
      clean/depth/%06d.png|.vfd
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import ply
from .errors import (
    DimensionMismatchError,
    EmptyMeshError,
    MalformedHeaderError,
    MissingFileError,
)
from .geometry import CameraModel, DepthMap

DEFAULT_FRAME_STRIDE = 5
_VFD_MAGIC = b"VFD1"


@dataclass
class Frame:
    """One posed RGB-D capture with its clutter mask.

    ``id`` is the dense in-memory index; ``source_id`` keeps the on-disk frame
    number, which differs after strided loading.
    """

    color: np.ndarray          # H x W x 3 uint8
    captured_depth: DepthMap        # captured depth, clutter included
    mask: np.ndarray           # H x W bool, True on clutter
    camera: CameraModel
    id: int
    source_id: int | None = None

    def __post_init__(self):
        if self.source_id is None:
            self.source_id = self.id
        self.color = np.asarray(self.color, dtype=np.uint8)
        self.mask = np.asarray(self.mask).astype(bool)
        h, w = self.camera.height, self.camera.width
        shapes = {
            "color": self.color.shape[:2],
            "depth": self.captured_depth.values.shape,
            "mask": self.mask.shape,
        }
        for name, shape in shapes.items():
            if shape != (h, w):
                raise DimensionMismatchError(
                    f"frame {self.id}: {name} is {shape[1]}x{shape[0]}, camera expects {w}x{h}"
                )


@dataclass
class InpaintState:
    """Evolving per-frame inpainting record.

    ``stage_outputs`` holds the four consistency-stage depth maps in order
    (pixel prune, region prune, cross-frame prune, cross-frame vote); valid
    pixel sets shrink monotonically along that list.
    """

    proposed_color: np.ndarray
    proposed_depth: DepthMap
    stage_outputs: list[DepthMap] = field(default_factory=list)
    residual_mask: np.ndarray | None = None
    hole_mask: np.ndarray | None = None  # pixels ever scheduled for inpainting

    def check_monotone(self) -> None:
        prev = self.proposed_depth.valid_mask
        for i, stage in enumerate(self.stage_outputs):
            cur = stage.valid_mask
            if np.any(cur & ~prev):
                raise AssertionError(f"stage {i + 1} added valid pixels; pruning must only remove")
            prev = cur


@dataclass
class LabeledMesh:
    """Triangle mesh with per-vertex instance ids and a binary clutter class."""

    vertices: np.ndarray      # N x 3 float
    triangles: np.ndarray     # T x 3 int32
    instance_id: np.ndarray   # N int32
    clutter: np.ndarray       # N bool
    colors: np.ndarray | None = None  # N x 3 uint8

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        self.instance_id = np.asarray(self.instance_id, dtype=np.int32)
        self.clutter = np.asarray(self.clutter).astype(bool)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8)
        n = len(self.vertices)
        if len(self.instance_id) != n or len(self.clutter) != n:
            raise DimensionMismatchError("per-vertex label arrays must match vertex count")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ValueError("triangle indices out of range")
        for inst in np.unique(self.instance_id):
            classes = np.unique(self.clutter[self.instance_id == inst])
            if len(classes) > 1:
                raise ValueError(f"instance {inst} mixes clutter and non-clutter vertices")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def submesh(self, vertex_mask: np.ndarray) -> "LabeledMesh":
        """Mesh restricted to the selected vertices (triangles fully inside)."""
        vertex_mask = np.asarray(vertex_mask).astype(bool)
        new_index = np.full(self.n_vertices, -1, dtype=np.int64)
        new_index[vertex_mask] = np.arange(int(vertex_mask.sum()))
        tri_keep = vertex_mask[self.triangles].all(axis=1)
        return LabeledMesh(
            vertices=self.vertices[vertex_mask],
            triangles=new_index[self.triangles[tri_keep]],
            instance_id=self.instance_id[vertex_mask],
            clutter=self.clutter[vertex_mask],
            colors=None if self.colors is None else self.colors[vertex_mask],
        )


@dataclass
class RenderPair:
    """Ground-truth clean render for one view (synthetic benches only)."""

    color: np.ndarray
    depth: DepthMap


@dataclass
class SceneBundle:
    frames: list[Frame]
    mesh: LabeledMesh
    clean_renders: list[RenderPair] | None = None

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("a bundle needs at least one frame")
        ids = [f.id for f in self.frames]
        if sorted(ids) != list(range(len(self.frames))):
            raise ValueError(f"frame ids must be dense 0..{len(self.frames) - 1}, got {ids}")
        if self.clean_renders is not None and len(self.clean_renders) != len(self.frames):
            raise DimensionMismatchError("clean_renders length must match frames")

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass
class InstanceStat:
    instance_id: int
    clutter: bool
    vertex_count: int


def instance_stats(mesh: LabeledMesh) -> tuple[list[InstanceStat], int]:
    """Per-instance vertex counts plus the scene median count.

    Median over an even number of instances is the lower median, which keeps
    downstream instance weights rational and reproducible.
    """
    if mesh.n_vertices == 0:
        raise EmptyMeshError("mesh has no vertices")
    ids, counts = np.unique(mesh.instance_id, return_counts=True)
    stats = []
    for inst, count in zip(ids, counts):
        cls = bool(mesh.clutter[mesh.instance_id == inst][0])
        stats.append(InstanceStat(int(inst), cls, int(count)))
    sorted_counts = np.sort(counts)
    median = int(sorted_counts[(len(sorted_counts) - 1) // 2])
    return stats, median


# ---------------------------------------------------------------------------
# image / depth file IO


def save_color_png(path, color: np.ndarray) -> None:
    Image.fromarray(np.asarray(color, dtype=np.uint8), mode="RGB").save(path)


def load_color_png(path) -> np.ndarray:
    return np.array(Image.open(path).convert("RGB"), dtype=np.uint8)


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    return np.array(Image.open(path).convert("L")) > 127


def save_depth_png(path, depth) -> None:
    """Quantize to 16-bit millimeters (lossy beyond 1 mm / 65.535 m)."""
    values = depth.values if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    mm = np.clip(np.round(values * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def load_depth_png(path) -> DepthMap:
    arr = np.array(Image.open(path), dtype=np.float64)
    return DepthMap(arr / 1000.0)


def save_depth_vfd(path, depth, scale: float = 1.0) -> None:
    """Lossless float32 container: 16-byte header (magic, w, h, scale) + data."""
    values = depth.values if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    data = (values / scale).astype(np.float32)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(_VFD_MAGIC)
        f.write(struct.pack("<IIf", w, h, scale))
        f.write(data.tobytes())


def load_depth_vfd(path) -> DepthMap:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != _VFD_MAGIC:
            raise MalformedHeaderError(f"{path}: bad VFD header")
        w, h, scale = struct.unpack("<IIf", header[4:])
        data = np.frombuffer(f.read(w * h * 4), dtype=np.float32)
        if data.size != w * h:
            raise MalformedHeaderError(f"{path}: truncated VFD payload ({data.size} of {w * h} values)")
    return DepthMap(data.reshape(h, w).astype(np.float64) * scale)


def _load_depth_any(base: str) -> DepthMap:
    for ext, loader in ((".vfd", load_depth_vfd), (".png", load_depth_png)):
        if os.path.exists(base + ext):
            return loader(base + ext)
    raise MissingFileError(f"missing depth file {base}.png (or .vfd)")


# ---------------------------------------------------------------------------
# mesh IO


def save_mesh_ply(path, mesh: LabeledMesh) -> None:
    props = {
        "x": mesh.vertices[:, 0].astype(np.float32),
        "y": mesh.vertices[:, 1].astype(np.float32),
        "z": mesh.vertices[:, 2].astype(np.float32),
        "instance_id": mesh.instance_id.astype(np.int32),
        "clutter": mesh.clutter.astype(np.uint8),
    }
    if mesh.colors is not None:
        props["red"] = mesh.colors[:, 0]
        props["green"] = mesh.colors[:, 1]
        props["blue"] = mesh.colors[:, 2]
    ply.write_ply(path, props, mesh.triangles)


def load_mesh_ply(path) -> LabeledMesh:
    if not os.path.exists(path):
        raise MissingFileError(f"missing mesh file {path}")
    props, triangles = ply.read_ply(path)
    for key in ("x", "y", "z", "instance_id", "clutter"):
        if key not in props:
            raise MalformedHeaderError(f"{path}: mesh lacks vertex property {key!r}")
    vertices = np.stack([props["x"], props["y"], props["z"]], axis=1).astype(np.float64)
    colors = None
    if all(k in props for k in ("red", "green", "blue")):
        colors = np.stack([props["red"], props["green"], props["blue"]], axis=1).astype(np.uint8)
    if triangles is None:
        triangles = np.zeros((0, 3), dtype=np.int32)
    return LabeledMesh(
        vertices=vertices,
        triangles=triangles,
        instance_id=props["instance_id"].astype(np.int32),
        clutter=props["clutter"].astype(bool),
        colors=colors,
    )


# ---------------------------------------------------------------------------
# bundle IO


def save_bundle(bundle: SceneBundle, path, depth_format: str = "png16") -> None:
    """Write a bundle directory. ``depth_format`` is ``png16`` (millimeter
    quantization) or ``vfd`` (lossless float32)."""
    if depth_format not in ("png16", "vfd"):
        raise ValueError(f"unknown depth format {depth_format!r}")
    save_depth = save_depth_png if depth_format == "png16" else save_depth_vfd
    ext = ".png" if depth_format == "png16" else ".vfd"

    for sub in ("cameras", "color", "depth", "mask"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    if bundle.clean_renders is not None:
        os.makedirs(os.path.join(path, "clean", "color"), exist_ok=True)
        os.makedirs(os.path.join(path, "clean", "depth"), exist_ok=True)

    for frame in bundle.frames:
        stem = f"{frame.id:06d}"
        with open(os.path.join(path, "cameras", stem + ".json"), "w") as f:
            json.dump(frame.camera.to_json_dict(), f)
        save_color_png(os.path.join(path, "color", stem + ".png"), frame.color)
        save_depth(os.path.join(path, "depth", stem + ext), frame.captured_depth)
        save_mask_png(os.path.join(path, "mask", stem + ".png"), frame.mask)
        if bundle.clean_renders is not None:
            clean = bundle.clean_renders[frame.id]
            save_color_png(os.path.join(path, "clean", "color", stem + ".png"), clean.color)
            save_depth(os.path.join(path, "clean", "depth", stem + ext), clean.depth)
    save_mesh_ply(os.path.join(path, "mesh.ply"), bundle.mesh)


def load_bundle(path, stride: int = DEFAULT_FRAME_STRIDE) -> SceneBundle:
    """Load a bundle directory, keeping every ``stride``-th frame.

    The default stride of 5 matches common capture subsampling; pass
    ``stride=1`` to load everything. Loaded frames are re-indexed densely.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    cam_dir = os.path.join(path, "cameras")
    if not os.path.isdir(cam_dir):
        raise MissingFileError(f"missing camera directory {cam_dir}")
    raw_ids = sorted(int(name[:-5]) for name in os.listdir(cam_dir) if name.endswith(".json"))
    if not raw_ids:
        raise MissingFileError(f"no camera files in {cam_dir}")
    kept = raw_ids[::stride]

    has_clean = os.path.isdir(os.path.join(path, "clean", "color"))
    frames: list[Frame] = []
    clean: list[RenderPair] = []
    for new_id, raw_id in enumerate(kept):
        stem = f"{raw_id:06d}"
        cam_path = os.path.join(cam_dir, stem + ".json")
        with open(cam_path) as f:
            camera = CameraModel.from_json_dict(json.load(f))
        color_path = os.path.join(path, "color", stem + ".png")
        if not os.path.exists(color_path):
            raise MissingFileError(f"missing color file {color_path}")
        color = load_color_png(color_path)
        depth = _load_depth_any(os.path.join(path, "depth", stem))
        mask_path = os.path.join(path, "mask", stem + ".png")
        if os.path.exists(mask_path):
            mask = load_mask_png(mask_path)
        else:
            mask = np.zeros(depth.values.shape, dtype=bool)
        try:
            frames.append(Frame(color=color, captured_depth=depth, mask=mask, camera=camera,
                                id=new_id, source_id=raw_id))
        except DimensionMismatchError as exc:
            raise DimensionMismatchError(f"{path}, frame files {stem}.*: {exc}") from exc
        if has_clean:
            clean_color = load_color_png(os.path.join(path, "clean", "color", stem + ".png"))
            clean_depth = _load_depth_any(os.path.join(path, "clean", "depth", stem))
            clean.append(RenderPair(color=clean_color, depth=clean_depth))

    mesh = load_mesh_ply(os.path.join(path, "mesh.ply"))
    return SceneBundle(frames=frames, mesh=mesh, clean_renders=clean if has_clean else None)
