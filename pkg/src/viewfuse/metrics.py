"""Evaluation metrics: Chamfer distance, image quality, mask overlap."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError, EmptyCloudError
from .scene import LabeledMesh

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_SIGMA = 1.5
_SSIM_WINDOW = 11


def chamfer(cloud_a: np.ndarray, cloud_b: np.ndarray) -> float:
    """Symmetric Chamfer distance in centimeters: mean of the two directed
    mean nearest-neighbor distances (exact, meters in / centimeters out)."""
    a = np.asarray(cloud_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(cloud_b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("chamfer distance needs two non-empty clouds")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float((d_ab.mean() + d_ba.mean()) / 2.0 * 100.0)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """SSIM map on one [0,1] channel, Gaussian 11x11 window, sigma 1.5,
    K1=0.01, K2=0.03. Returns the valid interior (window fully inside)."""
    h, w = x.shape
    size = min(_SSIM_WINDOW, h - (h + 1) % 2, w - (w + 1) % 2)
    if size < 3:
        size = 1
    win = _gaussian_window(size, _SSIM_SIGMA)

    def f(img):
        return ndimage.correlate(img, win, mode="constant")

    mu_x, mu_y = f(x), f(y)
    sxx = f(x * x) - mu_x * mu_x
    syy = f(y * y) - mu_y * mu_y
    sxy = f(x * y) - mu_x * mu_y
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    ssim = num / den
    pad = size // 2
    if pad:
        ssim = ssim[pad:h - pad, pad:w - pad]
    return ssim


def image_metrics(render: np.ndarray, truth: np.ndarray,
                  region: np.ndarray | None = None) -> dict:
    """L1, L2 (RMSE), PSNR and SSIM between two 8-bit RGB images on the [0,1]
    scale. Identical images report PSNR as the +inf sentinel. With ``region``
    the dict additionally carries the same metrics restricted to that mask
    (keys suffixed ``_region``)."""
    render = np.asarray(render)
    truth = np.asarray(truth)
    if render.shape != truth.shape:
        raise DimensionMismatchError(f"images disagree: {render.shape} vs {truth.shape}")
    x = render.astype(np.float64) / 255.0
    y = truth.astype(np.float64) / 255.0

    def basic(xs, ys):
        diff = xs - ys
        l1 = float(np.abs(diff).mean())
        l2 = float(np.sqrt((diff ** 2).mean()))
        psnr = float("inf") if l2 == 0 else float(20.0 * np.log10(1.0 / l2))
        return l1, l2, psnr

    l1, l2, psnr = basic(x, y)
    ssim_maps = [_ssim_map(x[..., c], y[..., c]) for c in range(3)]
    out = {"l1": l1, "l2": l2, "psnr": psnr,
           "ssim": float(np.mean([m.mean() for m in ssim_maps]))}

    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != render.shape[:2]:
            raise DimensionMismatchError("region mask size mismatch")
        if region.any():
            l1r, l2r, psnr_r = basic(x[region], y[region])
            pad = (render.shape[0] - ssim_maps[0].shape[0]) // 2
            inner = region[pad:region.shape[0] - pad, pad:region.shape[1] - pad] if pad else region
            ssim_r = float(np.mean([m[inner].mean() for m in ssim_maps])) if inner.any() else float("nan")
            out.update({"l1_region": l1r, "l2_region": l2r, "psnr_region": psnr_r,
                        "ssim_region": ssim_r})
    return out


def mask_metrics(pred_mask: np.ndarray, gt_mask: np.ndarray) -> dict:
    """IoU per class, mean IoU over defined classes, and precision/recall for
    the clutter (positive) class. A class absent from both prediction and
    ground truth has undefined IoU, reported as None."""
    pred = np.asarray(pred_mask).astype(bool).ravel()
    gt = np.asarray(gt_mask).astype(bool).ravel()
    if pred.shape != gt.shape:
        raise DimensionMismatchError("mask supports disagree")

    def iou(p, g):
        union = int((p | g).sum())
        if union == 0:
            return None
        return float(int((p & g).sum()) / union)

    iou_clutter = iou(pred, gt)
    iou_clean = iou(~pred, ~gt)
    defined = [v for v in (iou_clutter, iou_clean) if v is not None]
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return {
        "iou_clutter": iou_clutter,
        "iou_non_clutter": iou_clean,
        "miou": float(np.mean(defined)) if defined else None,
        "precision": precision,
        "recall": recall,
    }


def sample_mesh_points(mesh: LabeledMesh, n: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples; used to compare meshes by
    Chamfer distance."""
    tris = mesh.vertices[mesh.triangles]
    if len(tris) == 0:
        raise EmptyCloudError("mesh has no triangles to sample")
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    total = areas.sum()
    if total <= 0:
        raise EmptyCloudError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(tris), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = tris[pick, 0], tris[pick, 1], tris[pick, 2]
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
