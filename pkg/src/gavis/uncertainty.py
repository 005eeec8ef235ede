"""Visibility-compensated uncertainty rasterization and image-level entropy.

Each pixel is treated as a Gaussian mixture over colour: one component per
contributing particle (weight ``w* v``, covariance ``Q_c``) plus a prior
component that collects the invisible mass ``w0 = sum w* (1 - v)`` with
covariance ``Q_0``.  The per-pixel score is the closed-form Huber upper
bound on that mixture's differential entropy.

The mixture means (particle colours for the components, ``prior_mean`` for
the prior) never enter the bound; they are only used for mixture dumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .raster import LOG_2PIE, RasterConfig, prepare_frame, run_pass, trace_pixel
from .shmath import real_sh_basis
from .vfield import VisibilityField, query_many, view_directions

VARIANCE_PROVIDERS = ("constant", "sh_propagation")
CORRELATIONS = ("none", "hook")
_MIN_VARIANCE = 1e-12


def _logdet(m) -> float:
    sign, ld = np.linalg.slogdet(m)
    return ld if sign > 0 else -math.inf


@dataclass(frozen=True, eq=False)
class UncertaintyConfig:
    beta: float = 0.5
    prior_opacity: float = 0.15
    prior_cov: np.ndarray = dc_field(default_factory=lambda: np.eye(3))
    color_sigma: float = 0.1
    variance_provider: str = "constant"
    coeff_variance: float = 0.0
    correlation: str = "none"
    correlation_lambda: float = 1.0
    prior_mean: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError("beta must lie in [0, 1]")
        if not 0.0 <= self.prior_opacity <= 1.0:
            raise ParameterError("prior_opacity must lie in [0, 1]")
        q0 = np.array(self.prior_cov, dtype=np.float64).reshape(3, 3)
        if not np.allclose(q0, q0.T) or np.any(np.linalg.eigvalsh(0.5 * (q0 + q0.T)) <= 0):
            raise ParameterError("prior_cov must be symmetric positive definite")
        q0.setflags(write=False)
        object.__setattr__(self, "prior_cov", q0)
        if not self.color_sigma > 0:
            raise ParameterError("color_sigma must be positive")
        if self.variance_provider not in VARIANCE_PROVIDERS:
            raise ParameterError(f"variance_provider must be one of {VARIANCE_PROVIDERS}")
        if self.correlation not in CORRELATIONS:
            raise ParameterError(f"correlation must be one of {CORRELATIONS}")
        if not self.correlation_lambda > 0:
            raise ParameterError("correlation_lambda must be positive")
        if self.coeff_variance < 0:
            raise ParameterError("coeff_variance must be >= 0")
        if self.variance_provider == "constant" and self.logdet_prior < self.logdet_color - 1e-12:
            raise ParameterError("|Q_0| must be at least |Q_c| for the entropy bound to stay valid")

    def __eq__(self, other):
        return isinstance(other, UncertaintyConfig) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in self.__dataclass_fields__
        )

    @property
    def color_cov(self) -> np.ndarray:
        return self.color_sigma ** 2 * np.eye(3)

    @property
    def logdet_color(self) -> float:
        return 3.0 * math.log(self.color_sigma ** 2)

    @property
    def logdet_prior(self) -> float:
        return _logdet(self.prior_cov)


def compensated_alpha(alpha, o_g, v, config: UncertaintyConfig = None, alpha_clamp_max=0.99):
    """Opacity pulled toward the prior for poorly observed particles.

    ``o_g`` is accepted for interface symmetry; it is already folded into
    ``alpha``.
    """
    config = config or UncertaintyConfig()
    b, o0 = config.beta, config.prior_opacity
    a = (v + b * (1.0 - v)) * alpha + o0 * (1.0 - b) * (1.0 - v)
    return np.clip(a, 0.0, alpha_clamp_max)


def sh_variance_propagation(coeff_variances, d) -> np.ndarray:
    """Diagonal colour covariance from independent per-coefficient variances."""
    var = np.asarray(coeff_variances, dtype=np.float64)
    if var.ndim != 2 or var.shape[0] != 3:
        raise ParameterError("coeff_variances must be shaped (3, (L+1)^2)")
    if np.any(var < 0):
        raise ParameterError("coefficient variances must be >= 0")
    L = int(round(math.sqrt(var.shape[1]))) - 1
    if (L + 1) ** 2 != var.shape[1]:
        raise ParameterError("coefficient count is not a square")
    y2 = real_sh_basis(L, np.asarray(d, dtype=np.float64)) ** 2
    return np.diag(var @ y2)


def _splat_color_var(scene, idx, camera, config: UncertaintyConfig, coeff_variances):
    """Per-splat diagonal of Q_c, shape (M, 3)."""
    if config.variance_provider == "constant":
        return np.full((len(idx), 3), config.color_sigma ** 2)
    if coeff_variances is None:
        k = scene.color_sh.shape[2]
        coeff_variances = np.full((len(scene), 3, k), config.coeff_variance)
    var = np.asarray(coeff_variances, dtype=np.float64)
    if var.shape != scene.color_sh.shape:
        raise ParameterError(f"coeff_variances must be shaped {scene.color_sh.shape}")
    if np.any(var < 0):
        raise ParameterError("coefficient variances must be >= 0")
    dirs = view_directions(scene.positions[idx], camera.center, camera.forward)
    y2 = real_sh_basis(scene.color_degree, dirs) ** 2
    return np.maximum(np.einsum("nck,nk->nc", var[idx], y2), _MIN_VARIANCE)


class EntropyMap(NamedTuple):
    entropy: np.ndarray
    invisible_mass: np.ndarray
    visible_weight: np.ndarray
    final_transmittance: np.ndarray
    depth: np.ndarray


@dataclass
class EntropyRender:
    """Everything produced by one entropy pass (the map plus replay state)."""

    map: EntropyMap
    frame: object
    splat_vis: np.ndarray
    splat_logdet_c: np.ndarray
    splat_color_var: np.ndarray


def _render(scene, field: VisibilityField, camera, raster_config, unc_config, coeff_variances):
    raster_config = raster_config or RasterConfig()
    unc_config = unc_config or UncertaintyConfig()
    field = field.for_scene(scene)
    frame = prepare_frame(scene, camera, raster_config)
    idx = frame.splats.index
    # directional visibility of every projected splat, including those whose
    # centre lies just outside the image
    dirs = view_directions(scene.positions[idx], camera.center, camera.forward)
    vis = query_many(field, idx, dirs)
    cvar = _splat_color_var(scene, idx, camera, unc_config, coeff_variances)
    if unc_config.variance_provider == "constant":
        ldc = np.full(len(idx), unc_config.logdet_color)
    else:
        ldc = np.log(cvar).sum(axis=1)
    res = run_pass(scene, frame, raster_config, splat_vis=vis, splat_logdet_c=ldc,
                   logdet_0=unc_config.logdet_prior, beta=unc_config.beta, o0=unc_config.prior_opacity)
    emap = EntropyMap(res.entropy, res.invisible_mass, res.visible_weight, res.transmittance, res.depth_sum)
    return EntropyRender(emap, frame, vis, ldc, cvar)


def render_entropy(scene, field: VisibilityField, camera, raster_config: RasterConfig = None,
                   unc_config: UncertaintyConfig = None, coeff_variances=None) -> EntropyMap:
    return _render(scene, field, camera, raster_config, unc_config, coeff_variances).map


def image_entropy(emap: EntropyMap, depth=None, config: UncertaintyConfig = None) -> float:
    """Sum of per-pixel entropies, optionally reduced by the correlation hook.

    The hook's ``f_corr(H; d) = H * exp(-d / lambda)`` is a stand-in: it
    removes the share of entropy attributed to spatial correlation, which
    shrinks with expected depth.
    """
    config = config or UncertaintyConfig()
    h = np.asarray(emap.entropy if isinstance(emap, EntropyMap) else emap, dtype=np.float64)
    if config.correlation == "none":
        if depth is not None and np.shape(depth) != h.shape:
            raise ParameterError("entropy map and depth must have the same shape")
        return float(h.sum())
    if depth is None:
        depth = emap.depth
    d = np.asarray(depth, dtype=np.float64)
    if d.shape != h.shape:
        raise ParameterError("entropy map and depth must have the same shape")
    return float((h - h * np.exp(-d / config.correlation_lambda)).sum())


def gaussian_entropy(logdet) -> float:
    return 0.5 * logdet + 1.5 * LOG_2PIE


def mixture_dumps(scene, field, camera, pixels, raster_config: RasterConfig = None,
                  unc_config: UncertaintyConfig = None, coeff_variances=None, render=None):
    """Per-pixel mixtures behind the entropy map, for external certification.

    ``pixels`` is a sequence of (row, col).  Each dump lists the visible
    components (weight ``w* v``, colour mean along the pixel ray, diagonal
    covariance) and the prior component (weight ``w0``, ``Q_0``) together
    with the entropy value the renderer produced.
    """
    raster_config = raster_config or RasterConfig()
    unc_config = unc_config or UncertaintyConfig()
    if render is None:
        render = _render(scene, field, camera, raster_config, unc_config, coeff_variances)
    rays = camera.pixel_rays()
    out = []
    for row, col in pixels:
        row, col = int(row), int(col)
        tr = trace_pixel(render.frame, raster_config, row, col, render.splat_vis, render.splat_logdet_c,
                         unc_config.beta, unc_config.prior_opacity)
        basis = real_sh_basis(scene.color_degree, rays[row, col])
        comps = []
        for s, p, w, v in zip(tr["splats"], tr["particles"], tr["weights"], tr["visibility"]):
            wv = float(w * v)
            if wv <= 0.0:
                continue
            mean = np.clip(scene.color_sh[p] @ basis + 0.5, 0.0, 1.0)
            comps.append({"particle": int(p), "weight": wv, "mean": mean.tolist(),
                          "cov_diag": render.splat_color_var[s].tolist()})
        out.append({
            "pixel": [row, col],
            "entropy": float(render.map.entropy[row, col]),
            "invisible_mass": float(render.map.invisible_mass[row, col]),
            "final_transmittance": float(render.map.final_transmittance[row, col]),
            "components": comps,
            "prior": {
                "weight": float(tr["invisible_mass"]),
                "mean": list(map(float, unc_config.prior_mean)),
                "cov": unc_config.prior_cov.tolist(),
            },
        })
    return out
