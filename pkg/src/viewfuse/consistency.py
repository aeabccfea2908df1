"""Consistency pruning and voting over inpainted depth maps.

Four stages, each a pure filter that can only zero pixels:

1. per-pixel prune: inpainted depth must lie at or behind the capture;
   pixels empty in the capture are unfixable sensor cracks and are zeroed.
2. per-region prune: each connected hole region must as a whole lie behind
   the capture, and regions covering more than half the image are dropped.
3. cross-frame prune: an inpainted pixel, warped into any other view, must
   not occlude that view's captured depth.
4. cross-frame vote: an inpainted pixel keeps its value only when enough of
   the other views' inpainted depths that land on it agree within ``alpha``.

Stages run on an explicit evaluation mask (the pixels inpainted in the
current refinement round); everything else passes through untouched, so
previously accepted pixels never reopen.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionMismatchError
from .geometry import as_depth_values, nearest_pixel, warp_depth, warp_pixels


def _map_ordered(fn, items, threads: int | None):
    """Apply ``fn`` over ``items``, possibly in parallel, returning results in
    input order so downstream accumulation stays deterministic."""
    if threads is not None and threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))

_CROSS = ndimage.generate_binary_structure(2, 1)
_FULL = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class ConsistencyConfig:
    """Thresholds for the four consistency stages.

    ``alpha`` is the voting agreement distance in meters and ``beta_percent``
    the strict support percentage a pixel must exceed. ``occlusion_tol``
    absorbs splat quantization in the cross-frame occlusion test, which
    compares against the minimum valid captured depth inside an
    ``occlusion_window`` x ``occlusion_window`` neighborhood of the landing
    pixel. ``eq_tol`` is the matching allowance on the single-frame rules: an
    inpainted pixel that reproduces the captured surface (the dilated mask
    ring, or background grazing the removed object's contact line) is
    trivially consistent and must not be rejected over sub-centimeter noise.
    ``keep_unsupported`` keeps voting pixels that no other view lands on;
    disabling it zeroes them instead.
    """

    alpha: float = 0.05
    beta_percent: float = 30.0
    max_region_fraction: float = 0.5
    occlusion_tol: float = 0.01
    connectivity: int = 4
    eq_tol: float = 0.01
    occlusion_window: int = 3
    region_rule: str = "mean"     # mean | min | all-pixels
    keep_unsupported: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.beta_percent < 100:
            raise ConfigError(f"beta_percent must be in (0, 100), got {self.beta_percent}")
        if not 0 < self.max_region_fraction <= 1:
            raise ConfigError(f"max_region_fraction must be in (0, 1], got {self.max_region_fraction}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.region_rule not in ("mean", "min", "all-pixels"):
            raise ConfigError(f"unknown region rule {self.region_rule!r}")
        if self.occlusion_window not in (1, 3):
            raise ConfigError(f"occlusion_window must be 1 or 3, got {self.occlusion_window}")

    @property
    def structure(self) -> np.ndarray:
        return _CROSS if self.connectivity == 4 else _FULL


@dataclass
class RegionLabeling:
    """Connected regions of a binary mask: per-pixel region id (0 = outside)
    plus per-region pixel counts (index 0 unused)."""

    labels: np.ndarray
    counts: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.counts) - 1


def label_regions(mask: np.ndarray, cfg: ConsistencyConfig) -> RegionLabeling:
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=cfg.structure)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    counts[0] = 0
    return RegionLabeling(labels=labels, counts=counts)


def _check_same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"arrays disagree in shape: {sorted(shapes)}")


def prune_single_pixel(captured, inpainted, eval_mask: np.ndarray, cfg: ConsistencyConfig) -> np.ndarray:
    """Stage 1: on evaluated pixels keep the inpainted depth only when it lies
    at or behind the capture (within ``eq_tol``); pixels empty in the capture
    are zeroed. Everything else carries through."""
    captured = as_depth_values(captured)
    inpainted = as_depth_values(inpainted)
    eval_mask = np.asarray(eval_mask, dtype=bool)
    _check_same_shape(captured, inpainted, eval_mask)
    out = inpainted.copy()
    keep = (captured > 0) & (inpainted > captured - cfg.eq_tol)
    out[eval_mask & ~keep] = 0.0
    return out


def _region_keep(captured, inpainted, region_mask, cfg) -> bool:
    valid = region_mask & (captured > 0) & (inpainted > 0)
    if not valid.any():
        return True
    if cfg.region_rule == "mean":
        return float(np.sum(inpainted[valid]) / valid.sum()) > float(np.sum(captured[valid]) / valid.sum()) - cfg.eq_tol
    if cfg.region_rule == "min":
        return float(np.min(inpainted[valid])) > float(np.min(captured[valid])) - cfg.eq_tol
    return bool(np.all(inpainted[valid] > captured[valid] - cfg.eq_tol))


def prune_single_region(captured, inpainted, pixel_pruned, eval_mask: np.ndarray,
                        cfg: ConsistencyConfig) -> np.ndarray:
    """Stage 2: drop whole connected hole regions that fail the aggregate
    behind-the-capture rule or cover more than ``max_region_fraction`` of the
    image."""
    captured = as_depth_values(captured)
    inpainted = as_depth_values(inpainted)
    pixel_pruned = as_depth_values(pixel_pruned)
    eval_mask = np.asarray(eval_mask, dtype=bool)
    _check_same_shape(captured, inpainted, pixel_pruned, eval_mask)

    out = pixel_pruned.copy()
    regions = label_regions(eval_mask, cfg)
    h, w = captured.shape
    max_pixels = cfg.max_region_fraction * h * w
    for region in range(1, regions.n_regions + 1):
        region_mask = regions.labels == region
        if regions.counts[region] > max_pixels or not _region_keep(captured, inpainted, region_mask, cfg):
            out[region_mask] = 0.0
    return out


def _min_filter_valid(depth: np.ndarray, window: int) -> np.ndarray:
    """Minimum over the window of valid (positive) depths; +inf where no valid
    neighbor exists."""
    src = np.where(depth > 0, depth, np.inf)
    if window == 1:
        return src
    return ndimage.minimum_filter(src, size=window, mode="constant", cval=np.inf)


def prune_cross_frame(captured, inpainted, region_pruned, eval_masks, cameras,
                      cfg: ConsistencyConfig, threads: int | None = 1) -> list[np.ndarray]:
    """Stage 3: zero evaluated pixels whose inpainted depth, warped into any
    other view, lands more than ``occlusion_tol`` in front of that view's
    captured depth. A pixel survives only if it violates no view."""
    n = len(inpainted)
    captured = [as_depth_values(d) for d in captured]
    inpainted = [as_depth_values(d) for d in inpainted]
    region_pruned = [as_depth_values(d) for d in region_pruned]
    cap_min = [_min_filter_valid(d, cfg.occlusion_window) for d in captured]

    outputs = []
    for s in range(n):
        out = region_pruned[s].copy()
        cand = np.asarray(eval_masks[s], dtype=bool) & (region_pruned[s] > 0)
        if not cand.any() or n == 1:
            outputs.append(out)
            continue
        vv, uu = np.nonzero(cand)
        us_f, vs_f = uu.astype(np.float64), vv.astype(np.float64)
        ds = inpainted[s][vv, uu]

        radius = cfg.occlusion_window // 2

        def check_target(t, s=s, us_f=us_f, vs_f=vs_f, ds=ds):
            u2, v2, z2, in_front = warp_pixels(us_f, vs_f, ds, cameras[s], cameras[t])
            ui = nearest_pixel(np.where(in_front, u2, -1.0))
            vi = nearest_pixel(np.where(in_front, v2, -1.0))
            h, w = captured[t].shape
            # border landings have a clipped neighborhood that cannot bound the
            # local surface extent, so they impose no constraint
            landed = in_front & (ui >= radius) & (ui < w - radius) & (vi >= radius) & (vi < h - radius)
            hit = np.zeros(ds.size, dtype=bool)
            if landed.any():
                ref = cap_min[t][vi[landed], ui[landed]]
                hit[np.nonzero(landed)[0]] = z2[landed] < ref - cfg.occlusion_tol
            return hit

        targets = [t for t in range(n) if t != s]
        violated = np.zeros(vv.size, dtype=bool)
        for hit in _map_ordered(check_target, targets, threads):
            violated |= hit
        out[vv[violated], uu[violated]] = 0.0
        outputs.append(out)
    return outputs


def _neighborhood_explained(warped: np.ndarray, inpainted: np.ndarray,
                            disputes: np.ndarray, alpha: float) -> np.ndarray:
    """Disputing voters whose depth falls inside the span of valid depths in
    the pixel's 3x3 neighborhood (padded by ``alpha``): within one pixel the
    surface sweeps that interval, so such a voter is consistent with local
    geometry even when the per-pixel depth step exceeds ``alpha`` on steep
    surfaces. Evaluated sparsely because disputes are rare."""
    h, w = inpainted.shape
    dv_idx, du_idx = np.nonzero(disputes)
    z = warped[dv_idx, du_idx]
    span_lo = np.full(dv_idx.size, np.inf)
    span_hi = np.full(dv_idx.size, -np.inf)
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            qv, qu = dv_idx + dv, du_idx + du
            ok = (qv >= 0) & (qv < h) & (qu >= 0) & (qu < w)
            nb = np.zeros(dv_idx.size)
            nb[ok] = inpainted[qv[ok], qu[ok]]
            valid = nb > 0
            span_lo[valid] = np.minimum(span_lo[valid], nb[valid])
            span_hi[valid] = np.maximum(span_hi[valid], nb[valid])
    explained_flat = (z > span_lo - alpha) & (z < span_hi + alpha)
    out = np.zeros_like(disputes)
    out[dv_idx[explained_flat], du_idx[explained_flat]] = True
    return out


def vote_cross_frame(inpainted, cross_pruned, hole_masks, eval_masks, cameras,
                     cfg: ConsistencyConfig, threads: int | None = 1) -> list[np.ndarray]:
    """Stage 4: keep an evaluated pixel only when, of the other views'
    inpainted depths that land on it, strictly more than ``beta_percent``
    agree with its own inpainted depth within ``alpha``.

    ``hole_masks`` selects each view's inpainted pixels (the voters); voting
    reads the raw inpainted depths, not the pruned stage-3 maps, and a frame's
    result never depends on other frames' stage-4 output.

    Two occlusion-aware exclusions keep votes meaningful at depth
    discontinuities, where splat rounding lands voters on pixels showing a
    different surface than the voter refers to:

    * a voter more than ``alpha`` behind the pixel's own depth refers to
      geometry this pixel would occlude and cannot dispute it;
    * an in-front dispute whose depth matches valid geometry in the pixel's
      3x3 neighborhood refers to an adjacent surface and is discounted.

    Both rules leave coherent wrong regions fully disputable: inside such a
    region the neighborhood carries no alternative surface to blame.
    """
    n = len(inpainted)
    inpainted = [as_depth_values(d) for d in inpainted]
    cross_pruned = [as_depth_values(d) for d in cross_pruned]
    voter_maps = []
    for t in range(n):
        masked = np.where(np.asarray(hole_masks[t], dtype=bool), inpainted[t], 0.0)
        voter_maps.append(masked)

    outputs = []
    for s in range(n):
        out = cross_pruned[s].copy()
        cand = np.asarray(eval_masks[s], dtype=bool) & (cross_pruned[s] > 0)
        if not cand.any() or n == 1:
            outputs.append(out)
            continue
        num = np.zeros(inpainted[s].shape, dtype=np.int64)
        den = np.zeros(inpainted[s].shape, dtype=np.int64)
        targets = [t for t in range(n) if t != s]
        warps = _map_ordered(lambda t, s=s: warp_depth(voter_maps[t], cameras[t], cameras[s]).depth,
                             targets, threads)
        for warped in warps:
            agree = np.abs(inpainted[s] - warped) < cfg.alpha
            counted = (warped > 0) & ~(warped > inpainted[s] + cfg.alpha)
            disputes = counted & ~agree
            if disputes.any():
                counted = counted & ~_neighborhood_explained(warped, inpainted[s], disputes, cfg.alpha)
            den += counted
            num += counted & agree
        # strict support ratio > beta%, on integers so the boundary is exact
        keep = 100.0 * num > cfg.beta_percent * den
        if cfg.keep_unsupported:
            keep |= den == 0
        out[cand & ~keep] = 0.0
        outputs.append(out)
    return outputs


@dataclass
class StageCounts:
    """Pixels of the evaluation mask surviving each stage, for one frame."""

    evaluated: int
    after_pixel_prune: int
    after_region_prune: int
    after_cross_prune: int
    after_vote: int

    def to_dict(self) -> dict:
        return {
            "evaluated": self.evaluated,
            "after_pixel_prune": self.after_pixel_prune,
            "after_region_prune": self.after_region_prune,
            "after_cross_prune": self.after_cross_prune,
            "after_vote": self.after_vote,
        }


def run_consistency(captured, inpainted, hole_masks, eval_masks, cameras,
                    cfg: ConsistencyConfig, disabled: frozenset = frozenset(),
                    threads: int | None = 1):
    """Run the full cascade for every frame.

    ``disabled`` may contain ``single-prune`` (stages 1+2), ``cross-prune``
    and ``voting``. Returns ``(stage_maps, counts)`` where ``stage_maps[f]``
    holds the four stage maps for frame f, in cascade order.
    """
    n = len(inpainted)
    captured = [as_depth_values(d) for d in captured]
    inpainted = [as_depth_values(d) for d in inpainted]
    eval_masks = [np.asarray(m, dtype=bool) for m in eval_masks]

    if "single-prune" in disabled:
        after_pixel = [d.copy() for d in inpainted]
        after_region = [d.copy() for d in inpainted]
    else:
        after_pixel = [prune_single_pixel(captured[f], inpainted[f], eval_masks[f], cfg) for f in range(n)]
        after_region = [prune_single_region(captured[f], inpainted[f], after_pixel[f], eval_masks[f], cfg) for f in range(n)]

    if "cross-prune" in disabled:
        after_cross = [d.copy() for d in after_region]
    else:
        after_cross = prune_cross_frame(captured, inpainted, after_region, eval_masks, cameras, cfg, threads=threads)

    if "voting" in disabled:
        after_vote_map = [d.copy() for d in after_cross]
    else:
        after_vote_map = vote_cross_frame(inpainted, after_cross, hole_masks, eval_masks, cameras, cfg, threads=threads)

    stage_maps = [[after_pixel[f], after_region[f], after_cross[f], after_vote_map[f]] for f in range(n)]
    counts = []
    for f in range(n):
        m = eval_masks[f]
        counts.append(StageCounts(
            evaluated=int(m.sum()),
            after_pixel_prune=int((after_pixel[f][m] > 0).sum()),
            after_region_prune=int((after_region[f][m] > 0).sum()),
            after_cross_prune=int((after_cross[f][m] > 0).sum()),
            after_vote=int((after_vote_map[f][m] > 0).sum()),
        ))
    return stage_maps, counts
