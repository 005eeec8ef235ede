"""Deterministic tile-based CPU rasterizer for Gaussian particles.

Splats are projected with EWA, globally sorted by (depth, particle index),
binned into square tiles and alpha-composited front to back per pixel.  A
splat contributes to a pixel when the pixel centre lies inside its 3-sigma
ellipse, so the set of contributors of a pixel does not depend on tiling.

The same per-pixel routine serves colour rendering, single-view particle
visibility and the visibility-compensated entropy pass used by
:mod:`gavis.uncertainty`.  Tiles run in parallel; per-particle visibility
sums are kept per (tile, splat) entry and reduced serially in tile order, so
every output is bit-identical for any thread count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
from numba import njit, prange

from .camera import DEFAULT_DILATION, CameraView, ProjectedSplats, project_gaussians
from .errors import ParameterError
from .shmath import real_sh_basis

# tbb is tried first by default and warns when the installed version is old
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

COVER_POWER = 4.5  # 0.5 * 3**2: pixel inside the 3-sigma ellipse
LOG_2PIE = math.log(2.0 * math.pi * math.e)


def max_threads() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def set_threads(n) -> int:
    """Set the worker count (clamped to what numba was started with)."""
    n = max(1, min(int(n), max_threads()))
    numba.set_num_threads(n)
    return n


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    transmittance_cutoff: float = 1e-4
    dilation: float = DEFAULT_DILATION
    alpha_clamp_max: float = 0.99

    def __post_init__(self):
        if int(self.tile_size) < 1:
            raise ParameterError("tile_size must be >= 1")
        if not 0.0 < self.transmittance_cutoff < 1.0:
            raise ParameterError("transmittance_cutoff must lie in (0, 1)")
        if self.dilation < 0:
            raise ParameterError("dilation must be >= 0")
        if not 0.0 < self.alpha_clamp_max <= 1.0:
            raise ParameterError("alpha_clamp_max must lie in (0, 1]")
        object.__setattr__(self, "tile_size", int(self.tile_size))


class RenderOutput(NamedTuple):
    color: np.ndarray
    depth: np.ndarray
    final_transmittance: np.ndarray
    weight_sum: np.ndarray


class TileBins(NamedTuple):
    """Flat per-tile splat lists: tile t owns ``entries[offsets[t]:offsets[t+1]]``.

    Entries index the depth-sorted splat arrays of the owning frame.
    """

    offsets: np.ndarray
    entries: np.ndarray
    tiles_x: int
    tiles_y: int
    tile_size: int

    def tile(self, tx, ty) -> np.ndarray:
        t = ty * self.tiles_x + tx
        return self.entries[self.offsets[t]:self.offsets[t + 1]]


@njit(cache=True)
def _bin_kernel(means, radius, tiles_x, tiles_y, ts):
    n = means.shape[0]
    lo_x = np.empty(n, np.int64)
    hi_x = np.empty(n, np.int64)
    lo_y = np.empty(n, np.int64)
    hi_y = np.empty(n, np.int64)
    counts = np.zeros(tiles_x * tiles_y + 1, np.int64)
    for i in range(n):
        lo_x[i] = max(0, int(math.floor((means[i, 0] - radius[i]) / ts)))
        hi_x[i] = min(tiles_x - 1, int(math.floor((means[i, 0] + radius[i]) / ts)))
        lo_y[i] = max(0, int(math.floor((means[i, 1] - radius[i]) / ts)))
        hi_y[i] = min(tiles_y - 1, int(math.floor((means[i, 1] + radius[i]) / ts)))
        for ty in range(lo_y[i], hi_y[i] + 1):
            for tx in range(lo_x[i], hi_x[i] + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    entries = np.empty(offsets[-1], np.int64)
    for i in range(n):
        for ty in range(lo_y[i], hi_y[i] + 1):
            for tx in range(lo_x[i], hi_x[i] + 1):
                t = ty * tiles_x + tx
                entries[fill[t]] = i
                fill[t] += 1
    return offsets, entries


def splat_binning(splats: ProjectedSplats, width, height, tile_size=16) -> TileBins:
    """Bin already depth-sorted splats into tiles (lists inherit the sort order).

    A splat lands in every tile whose square overlaps the box of half-width
    ``radius`` around its mean.
    """
    ts = int(tile_size)
    tiles_x = -(-int(width) // ts)
    tiles_y = -(-int(height) // ts)
    means = np.ascontiguousarray(splats.mean2d, dtype=np.float64).reshape(-1, 2)
    radius = np.ascontiguousarray(splats.radius, dtype=np.float64).reshape(-1)
    offsets, entries = _bin_kernel(means, radius, tiles_x, tiles_y, ts)
    return TileBins(offsets, entries, tiles_x, tiles_y, ts)


def sort_splats(splats: ProjectedSplats) -> ProjectedSplats:
    order = np.lexsort((splats.index, splats.depth))
    return ProjectedSplats(*(np.ascontiguousarray(a[order]) for a in splats))


class Frame(NamedTuple):
    """A scene projected into one camera: sorted splats plus their tile bins."""

    camera: CameraView
    splats: ProjectedSplats
    bins: TileBins
    opacity: np.ndarray


def prepare_frame(scene, camera: CameraView, config: RasterConfig = None) -> Frame:
    config = config or RasterConfig()
    if len(scene):
        ps = project_gaussians(scene.positions, scene.covariances, camera, config.dilation)
    else:
        ps = ProjectedSplats(np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros((0, 2, 2)),
                             np.zeros((0, 3)), np.zeros(0), np.zeros(0))
    ps = sort_splats(ps)
    bins = splat_binning(ps, camera.width, camera.height, config.tile_size)
    opacity = np.ascontiguousarray(scene.opacities[ps.index]) if len(scene) else np.zeros(0)
    return Frame(camera, ps, bins, opacity)


@njit(cache=True)
def _shade(px, py, lo, hi, entries, means, conics, opacity, depth,
           colors, basis_row, do_color, vis, logdet_c, do_entropy, beta, o0,
           eps_t, amax, vacc, cacc, do_vis, trace_g, trace_w, trace_v, do_trace):
    """Composite one pixel over tile entries ``lo..hi``.

    Returns (T, sum_w, sum_wz, r, g, b, H_components, w0, sum_wv, n_trace).
    """
    t = 1.0
    wsum = 0.0
    dsum = 0.0
    r = 0.0
    g = 0.0
    b = 0.0
    hsum = 0.0
    w0 = 0.0
    wv = 0.0
    nt = 0
    k = basis_row.shape[0]
    for e in range(lo, hi):
        s = entries[e]
        dx = px - means[s, 0]
        dy = py - means[s, 1]
        power = 0.5 * (conics[s, 0] * dx * dx + 2.0 * conics[s, 1] * dx * dy + conics[s, 2] * dy * dy)
        if power > 4.5:
            continue
        alpha = min(opacity[s] * math.exp(-power), amax)
        if do_entropy:
            v = vis[s]
            alpha = (v + beta * (1.0 - v)) * alpha + o0 * (1.0 - beta) * (1.0 - v)
            alpha = min(max(alpha, 0.0), amax)
        if do_vis:
            vacc[e] += t
            cacc[e] += 1
        w = t * alpha
        wsum += w
        dsum += w * depth[s]
        if do_color:
            for c in range(3):
                val = 0.5
                for j in range(k):
                    val += colors[s, c, j] * basis_row[j]
                val = min(max(val, 0.0), 1.0)
                if c == 0:
                    r += w * val
                elif c == 1:
                    g += w * val
                else:
                    b += w * val
        if do_entropy:
            wvis = w * vis[s]
            if wvis > 0.0:
                hsum += wvis * (-math.log(wvis) + 0.5 * logdet_c[s] + 1.5 * 2.8378770664093453)
            w0 += w * (1.0 - vis[s])
            wv += wvis
        if do_trace:
            trace_g[nt] = s
            trace_w[nt] = w
            trace_v[nt] = vis[s] if do_entropy else 1.0
            nt += 1
        t = t * (1.0 - alpha)
        if t < eps_t:
            break
    return t, wsum, dsum, r, g, b, hsum, w0, wv, nt


@njit(parallel=True, cache=True)
def _render_kernel(width, height, tiles_x, tiles_y, ts, offsets, entries, means, conics,
                   opacity, depth, colors, basis, do_color, vis, logdet_c, logdet_0,
                   do_entropy, beta, o0, eps_t, amax, do_vis,
                   out_t, out_w, out_d, out_rgb, out_h, out_w0, out_wv, vacc, cacc):
    dummy_i = np.zeros(0, np.int64)
    dummy_f = np.zeros(0)
    for tile in prange(tiles_x * tiles_y):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        lo = offsets[tile]
        hi = offsets[tile + 1]
        for i in range(ty * ts, min((ty + 1) * ts, height)):
            for j in range(tx * ts, min((tx + 1) * ts, width)):
                res = _shade(j + 0.5, i + 0.5, lo, hi, entries, means, conics, opacity, depth,
                             colors, basis[i * width + j], do_color, vis, logdet_c, do_entropy,
                             beta, o0, eps_t, amax, vacc, cacc, do_vis,
                             dummy_i, dummy_f, dummy_f, False)
                out_t[i, j] = res[0]
                out_w[i, j] = res[1]
                out_d[i, j] = res[2]
                out_rgb[i, j, 0] = res[3]
                out_rgb[i, j, 1] = res[4]
                out_rgb[i, j, 2] = res[5]
                h = res[6]
                w0 = res[7]
                if do_entropy and w0 > 0.0:
                    h += w0 * (-math.log(w0) + 0.5 * logdet_0 + 1.5 * 2.8378770664093453)
                out_h[i, j] = h
                out_w0[i, j] = w0
                out_wv[i, j] = res[8]


@njit(cache=True)
def _reduce_vis(entries, vacc, cacc, n):
    v = np.zeros(n)
    c = np.zeros(n, np.int64)
    for e in range(entries.shape[0]):
        v[entries[e]] += vacc[e]
        c[entries[e]] += cacc[e]
    return v, c


class PassResult(NamedTuple):
    transmittance: np.ndarray
    weight_sum: np.ndarray
    depth_sum: np.ndarray
    color: np.ndarray
    entropy: np.ndarray
    invisible_mass: np.ndarray
    visible_weight: np.ndarray
    vis_sum: np.ndarray
    vis_count: np.ndarray


def _color_inputs(scene, frame: Frame, do_color):
    cam = frame.camera
    if not do_color or len(frame.splats.index) == 0:
        return np.zeros((0, 3, 1)), np.zeros((cam.width * cam.height, 1))
    rays = cam.pixel_rays().reshape(-1, 3)
    basis = np.ascontiguousarray(real_sh_basis(scene.color_degree, rays))
    colors = np.ascontiguousarray(scene.color_sh[frame.splats.index])
    return colors, basis


def run_pass(scene, frame: Frame, config: RasterConfig, *, color=False, visibility=False,
             splat_vis=None, splat_logdet_c=None, logdet_0=0.0, beta=1.0, o0=0.0) -> PassResult:
    """Run the per-pixel compositor over ``frame``.

    ``splat_vis`` (per sorted splat) switches on the compensated-opacity
    entropy accumulation; ``splat_logdet_c`` is the matching log|Q_c|.
    """
    cam = frame.camera
    h, w = cam.height, cam.width
    ps = frame.splats
    m = len(ps.index)
    do_entropy = splat_vis is not None
    colors, basis = _color_inputs(scene, frame, color)
    if do_entropy:
        vis = np.ascontiguousarray(splat_vis, dtype=np.float64).reshape(m)
        ldc = np.ascontiguousarray(splat_logdet_c, dtype=np.float64).reshape(m)
    else:
        vis = np.zeros(m)
        ldc = np.zeros(m)
    n_entries = len(frame.bins.entries)
    vacc = np.zeros(n_entries if visibility else 0)
    cacc = np.zeros(n_entries if visibility else 0, np.int64)
    out = PassResult(
        np.ones((h, w)), np.zeros((h, w)), np.zeros((h, w)), np.zeros((h, w, 3)),
        np.zeros((h, w)), np.zeros((h, w)), np.zeros((h, w)), None, None,
    )
    _render_kernel(
        w, h, frame.bins.tiles_x, frame.bins.tiles_y, frame.bins.tile_size,
        frame.bins.offsets, frame.bins.entries, ps.mean2d, ps.conic, frame.opacity, ps.depth,
        colors, basis, bool(color) and m > 0, vis, ldc, float(logdet_0), do_entropy,
        float(beta), float(o0), config.transmittance_cutoff, config.alpha_clamp_max, bool(visibility),
        out.transmittance, out.weight_sum, out.depth_sum, out.color, out.entropy,
        out.invisible_mass, out.visible_weight, vacc, cacc,
    )
    if visibility:
        vs, vc = _reduce_vis(frame.bins.entries, vacc, cacc, m)
        out = out._replace(vis_sum=vs, vis_count=vc)
    return out


def rasterize(scene, camera: CameraView, config: RasterConfig = None) -> RenderOutput:
    config = config or RasterConfig()
    frame = prepare_frame(scene, camera, config)
    res = run_pass(scene, frame, config, color=True)
    return RenderOutput(
        color=np.clip(res.color, 0.0, 1.0),
        depth=res.depth_sum,
        final_transmittance=res.transmittance,
        weight_sum=res.weight_sum,
    )


def single_view_visibility(scene, camera: CameraView, config: RasterConfig = None) -> np.ndarray:
    """Per-particle mean transmittance over the pixels each particle touches.

    Particles that touch no pixel (culled, outside the view or hidden
    behind saturated pixels) get 0.
    """
    config = config or RasterConfig()
    frame = prepare_frame(scene, camera, config)
    res = run_pass(scene, frame, config, visibility=True)
    out = np.zeros(len(scene))
    touched = res.vis_count > 0
    out[frame.splats.index[touched]] = res.vis_sum[touched] / res.vis_count[touched]
    return out


@njit(cache=True)
def _trace_kernel(px, py, lo, hi, entries, means, conics, opacity, depth, vis, logdet_c,
                  do_entropy, beta, o0, eps_t, amax):
    n = hi - lo
    tg = np.empty(n, np.int64)
    tw = np.empty(n)
    tv = np.empty(n)
    dummy = np.zeros((0, 3, 1))
    res = _shade(px, py, lo, hi, entries, means, conics, opacity, depth, dummy, np.zeros(1), False,
                 vis, logdet_c, do_entropy, beta, o0, eps_t, amax, np.zeros(0),
                 np.zeros(0, np.int64), False, tg, tw, tv, True)
    k = res[9]
    return res[0], res[6], res[7], tg[:k], tw[:k], tv[:k]


def trace_pixel(frame: Frame, config: RasterConfig, row, col, splat_vis=None, splat_logdet_c=None,
                beta=1.0, o0=0.0):
    """Contributors of one pixel in compositing order.

    Returns a dict with particle indices, weights w (compensated when
    ``splat_vis`` is given), visibilities, final transmittance, the
    component part of the entropy sum and the invisible mass.
    """
    ps = frame.splats
    m = len(ps.index)
    bins = frame.bins
    t = (row // bins.tile_size) * bins.tiles_x + col // bins.tile_size
    do_entropy = splat_vis is not None
    vis = np.ascontiguousarray(splat_vis if do_entropy else np.zeros(m), dtype=np.float64)
    ldc = np.ascontiguousarray(splat_logdet_c if do_entropy else np.zeros(m), dtype=np.float64)
    tf, hc, w0, tg, tw, tv = _trace_kernel(
        col + 0.5, row + 0.5, bins.offsets[t], bins.offsets[t + 1], bins.entries, ps.mean2d,
        ps.conic, frame.opacity, ps.depth, vis, ldc, do_entropy, float(beta), float(o0),
        config.transmittance_cutoff, config.alpha_clamp_max,
    )
    return {
        "particles": ps.index[tg],
        "splats": tg,
        "weights": tw,
        "visibility": tv,
        "final_transmittance": tf,
        "component_entropy": hc,
        "invisible_mass": w0,
    }
