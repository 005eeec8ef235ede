"""Evaluation against ground-truth occluder geometry: VIS coverage and AUSE-V."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .occluders import OccluderSet

FRACTIONS = np.round(np.arange(1, 100) / 100.0, 2)


def _surface(occluders: OccluderSet):
    pts, wts, ids = occluders.sample_surface()
    rects = occluders.rectangles
    normals = np.zeros((len(pts), 3))
    two_sided = np.zeros(len(pts), bool)
    for k, r in enumerate(rects):
        sel = ids == k
        n = r.normal
        normals[sel] = n / np.linalg.norm(n)
        two_sided[sel] = r.two_sided
    return pts, wts, ids, normals, two_sided


def surface_seen(occluders: OccluderSet, trajectory, points=None, normals=None, two_sided=None):
    """Boolean per surface sample: seen unobstructed by at least one view."""
    if points is None:
        points, _, _, normals, two_sided = _surface(occluders)
    seen = np.zeros(len(points), bool)
    for view in trajectory:
        todo = np.nonzero(~seen)[0]
        if len(todo) == 0:
            break
        seen[todo] = occluders.seen_from(points[todo], normals[todo], two_sided[todo], view)
    return seen


def vis_coverage(occluders: OccluderSet, trajectory) -> float:
    """Area fraction of the opaque occluder surfaces seen by the trajectory."""
    pts, wts, ids, normals, two_sided = _surface(occluders)
    opaque = np.array([occluders.rectangles[k].opaque for k in ids], bool) if len(ids) else np.zeros(0, bool)
    pts, wts, normals, two_sided = pts[opaque], wts[opaque], normals[opaque], two_sided[opaque]
    total = wts.sum()
    if len(trajectory) == 0 or total <= 0:
        return 0.0
    seen = surface_seen(occluders, trajectory, pts, normals, two_sided)
    return float(wts[seen].sum() / total)


def render_gt_visibility(occluders: OccluderSet, trajectory_seen, query_camera) -> np.ndarray:
    """Binary map for ``query_camera``: 1 where the first surface hit was never seen.

    Pixels whose ray hits nothing are 0.
    """
    cam = query_camera
    rays = cam.pixel_rays().reshape(-1, 3)
    t, k = occluders.ray_cast(cam.center, rays)
    hit = k >= 0
    out = np.zeros(len(rays), np.uint8)
    if not np.any(hit):
        return out.reshape(cam.height, cam.width)
    pts = cam.center + t[hit, None] * rays[hit]
    rects = occluders.rectangles
    normals = np.stack([rects[i].normal / np.linalg.norm(rects[i].normal) for i in k[hit]])
    two = np.array([rects[i].two_sided for i in k[hit]], bool)
    seen = surface_seen(occluders, trajectory_seen, pts, normals, two)
    out[np.nonzero(hit)[0]] = (~seen).astype(np.uint8)
    return out.reshape(cam.height, cam.width)


def oracle_curve(error, fractions=FRACTIONS) -> np.ndarray:
    e = np.sort(np.asarray(error, dtype=np.float64).reshape(-1))[::-1]
    return _remaining_means(np.cumsum(e), e.sum(), len(e), fractions)


def _remaining_means(removed_cumsum, total, n, fractions):
    ks = np.floor(fractions * n + 1e-9).astype(np.int64)
    removed = np.where(ks > 0, removed_cumsum[np.maximum(ks - 1, 0)], 0.0)
    rest = n - ks
    return np.where(rest > 0, (total - removed) / np.maximum(rest, 1), 0.0)


def sparsification_curve(pred, error, fractions=FRACTIONS) -> np.ndarray:
    """Mean remaining error after removing the top-f fraction by ``pred``.

    Among equal predictions the removal order is undefined; the curve is the
    expectation over all such orders (ties share their error evenly).
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    e = np.asarray(error, dtype=np.float64).reshape(-1)
    order = np.argsort(-p, kind="stable")
    p, e = p[order], e[order]
    # replace each error by the mean over its group of tied predictions
    starts = np.r_[0, np.nonzero(np.diff(p))[0] + 1]
    sums = np.add.reduceat(e, starts) if len(e) else np.zeros(0)
    sizes = np.diff(np.r_[starts, len(e)])
    smoothed = np.repeat(sums / sizes, sizes) if len(e) else e
    return _remaining_means(np.cumsum(smoothed), e.sum(), len(e), fractions)


def ause_v(entropy_map, gt_visibility_map) -> float:
    """Area between the entropy-ordered and ideal sparsification curves."""
    h = np.asarray(getattr(entropy_map, "entropy", entropy_map), dtype=np.float64)
    g = np.asarray(gt_visibility_map, dtype=np.float64)
    if h.shape != g.shape:
        raise ParameterError(f"entropy map {h.shape} and gt map {g.shape} differ in shape")
    if h.size == 0:
        return 0.0
    gap = np.abs(sparsification_curve(h, g) - oracle_curve(g))
    return float(np.clip(gap.mean(), 0.0, 1.0))
