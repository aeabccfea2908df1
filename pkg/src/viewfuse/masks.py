"""Projection of 3-D clutter instances into camera views as removal masks.

A pixel is masked when a clutter triangle wins the mesh z-buffer there and the
rasterized depth agrees with the captured depth (occluded clutter does not
mask; pixels without captured depth fall back to the mesh visibility test
alone). Masks are then dilated with a 3x3 cross kernel to absorb
mesh-to-capture misalignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionMismatchError, SuspectedMisalignmentError
from .geometry import nearest_pixel
from .raster import rasterize_mesh
from .scene import Frame, LabeledMesh

_CROSS = ndimage.generate_binary_structure(2, 1)
_MISALIGN_FRACTION = 1e-3


@dataclass(frozen=True)
class ProjectionConfig:
    dilation_iters: int = 6
    depth_agreement_tol: float = 0.05
    min_mask_pixels: int = 1

    def __post_init__(self):
        if self.dilation_iters < 0:
            raise ConfigError(f"dilation_iters must be >= 0, got {self.dilation_iters}")
        if self.depth_agreement_tol <= 0:
            raise ConfigError(f"depth_agreement_tol must be > 0, got {self.depth_agreement_tol}")


def dilate_mask(mask: np.ndarray, iterations: int) -> np.ndarray:
    """Morphological dilation with the 3x3 cross kernel (4-neighborhood per
    iteration); ``iterations`` iterations grow the mask by that taxicab
    radius."""
    mask = np.asarray(mask, dtype=bool)
    if iterations == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=_CROSS, iterations=iterations)


def _clutter_vertex_consistency(mesh: LabeledMesh, frame: Frame, tol: float) -> float:
    """Fraction of clutter vertices that project in bounds with depth agreeing
    with the capture."""
    verts = mesh.vertices[mesh.clutter]
    if len(verts) == 0:
        return 1.0
    cam = frame.camera
    p_cam = (verts - cam.position) @ cam.rotation
    z = p_cam[:, 2]
    front = z > 1e-9
    if not front.any():
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p_cam[:, 0] / z + cam.cx
        v = cam.fy * p_cam[:, 1] / z + cam.cy
    ui = nearest_pixel(np.where(front, u, -1.0))
    vi = nearest_pixel(np.where(front, v, -1.0))
    ok = front & (ui >= 0) & (ui < cam.width) & (vi >= 0) & (vi < cam.height)
    if not ok.any():
        return 0.0
    cap = frame.captured_depth.values[vi[ok], ui[ok]]
    consistent = (cap > 0) & (np.abs(cap - z[ok]) <= tol)
    return float(consistent.sum()) / len(verts)


def project_masks(mesh: LabeledMesh, frames: list[Frame], cfg: ProjectionConfig,
                  update_frames: bool = True) -> list[np.ndarray]:
    """Project clutter instances into every frame; returns the dilated binary
    masks. With ``update_frames`` each frame's mask becomes the union of its
    previous mask and the projection.

    Raises SuspectedMisalignmentError when, in every view, fewer than 0.1% of
    clutter vertices agree with the captured depth.
    """
    has_clutter = bool(mesh.clutter.any())
    if has_clutter and frames:
        fractions = [_clutter_vertex_consistency(mesh, f, cfg.depth_agreement_tol) for f in frames]
        if max(fractions) < _MISALIGN_FRACTION:
            raise SuspectedMisalignmentError(
                f"at most {max(fractions):.2e} of clutter vertices are depth-consistent in any "
                "view; mesh and captures likely use different coordinate frames"
            )

    tri_clutter = mesh.clutter[mesh.triangles].any(axis=1)
    masks = []
    for frame in frames:
        if not has_clutter:
            mask = np.zeros((frame.camera.height, frame.camera.width), dtype=bool)
        else:
            raster = rasterize_mesh(mesh.vertices, mesh.triangles, frame.camera)
            winner = raster.value
            clutter_px = (winner >= 0) & tri_clutter[np.maximum(winner, 0)]
            cap = frame.captured_depth.values
            agreement = (cap == 0) | (np.abs(raster.depth - cap) <= cfg.depth_agreement_tol)
            mask = clutter_px & agreement
            if cfg.min_mask_pixels > 1 and mask.any():
                labels, n = ndimage.label(mask, structure=_CROSS)
                counts = np.bincount(labels.ravel(), minlength=n + 1)
                small = counts < cfg.min_mask_pixels
                small[0] = False
                mask[small[labels]] = False
            mask = dilate_mask(mask, cfg.dilation_iters)
        masks.append(mask)
        if update_frames:
            frame.mask = frame.mask | mask
    return masks


def mask_frame(frame: Frame, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply a removal mask: returns ``(color, depth)`` copies with masked
    color zeroed (fill sentinel; the mask itself is the flag) and masked depth
    set to the 0 invalid sentinel."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.captured_depth.values.shape:
        raise DimensionMismatchError(
            f"mask is {mask.shape}, frame {frame.id} is {frame.captured_depth.values.shape}"
        )
    color = frame.color.copy()
    depth = frame.captured_depth.values.copy()
    color[mask] = 0
    depth[mask] = 0.0
    return color, depth
