"""Anisotropic visibility field: construction, queries and density control.

Each particle stores the SH expansion of the summed vMF directional
visibility of all training views.  A query evaluates that expansion for a
direction and turns the (clamped) sum into a probability with the AM-GM
lower bound ``1 - (1 - V/|P|)**|P|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ParameterError
from .io import dump_json
from .raster import RasterConfig, single_view_visibility
from .scene import Scene, Trajectory
from .shmath import VmfParams, _check_unit, num_coeffs, real_sh_basis

DEFAULT_DEGREE = 2


@dataclass(frozen=True, eq=False)
class VisibilityField:
    gamma: np.ndarray
    num_views: int
    vmf: VmfParams = dc_field(default_factory=VmfParams)
    degree: int = DEFAULT_DEGREE
    virtual_mask: np.ndarray = None

    def __post_init__(self):
        g = np.array(self.gamma, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != num_coeffs(self.degree):
            raise ParameterError(f"gamma must be (N, {num_coeffs(self.degree)})")
        if int(self.num_views) < 1:
            raise ParameterError("a field needs at least one view")
        mask = np.zeros(len(g), bool) if self.virtual_mask is None else np.array(self.virtual_mask, bool)
        if mask.shape != (len(g),):
            raise ParameterError("virtual_mask length must match gamma")
        g[mask] = 0.0
        g.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "virtual_mask", mask)
        object.__setattr__(self, "num_views", int(self.num_views))

    def __len__(self):
        return len(self.gamma)

    def __eq__(self, other):
        return (
            isinstance(other, VisibilityField)
            and self.num_views == other.num_views
            and self.degree == other.degree
            and self.vmf == other.vmf
            and np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.virtual_mask, other.virtual_mask)
        )

    def extended(self, n_virtual) -> "VisibilityField":
        """Field for the scene with ``n_virtual`` virtual particles appended."""
        g = np.concatenate([self.gamma, np.zeros((int(n_virtual), self.gamma.shape[1]))])
        mask = np.concatenate([self.virtual_mask, np.ones(int(n_virtual), bool)])
        return VisibilityField(g, self.num_views, self.vmf, self.degree, mask)

    def for_scene(self, scene: Scene) -> "VisibilityField":
        """Match an augmented scene (original particles first, then virtuals)."""
        n = len(scene)
        if n == len(self):
            return self
        extra = n - len(self)
        if extra < 0 or not np.all(scene.is_virtual[len(self):]):
            raise ParameterError(f"field has {len(self)} particles, scene has {n}")
        return self.extended(extra)

    def to_dict(self) -> dict:
        return {
            "L": self.degree,
            "kappa": self.vmf.kappa,
            "num_views": self.num_views,
            "gamma": self.gamma.tolist(),
            "virtual": self.virtual_mask.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "VisibilityField":
        L = int(d["L"])
        g = np.array(d["gamma"], dtype=np.float64).reshape(-1, num_coeffs(L))
        return cls(g, int(d["num_views"]), VmfParams(float(d["kappa"])), L, d["virtual"])


def save_field(f: VisibilityField, path):
    dump_json(f.to_dict(), path)


def view_directions(positions, center, fallback=None):
    """Unit vectors from a camera centre to each point."""
    d = np.asarray(positions, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    fb = np.array([0.0, 0.0, 1.0]) if fallback is None else np.asarray(fallback, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(n > 0, d / np.where(n > 0, n, 1.0), fb)
    return d


def view_visibility(scene: Scene, view, raster_config=None) -> np.ndarray:
    """Per-view term ``b = Phi * T``: rasterised visibility gated by the centre being in view.

    Without the explicit gate a particle whose centre is outside the image
    but whose footprint reaches in would count as seen.
    """
    b = single_view_visibility(scene, view, raster_config)
    return np.where(view.in_frustum(scene.positions), b, 0.0)


def view_contribution(scene: Scene, view, b, vmf: VmfParams, L: int) -> np.ndarray:
    """Coefficient increment of one view given its single-view visibilities ``b``."""
    dirs = view_directions(scene.positions, view.center, view.forward)
    return b[:, None] * (real_sh_basis(L, dirs) * vmf.expanded_band_factors(L))


def construct_field(scene: Scene, trajectory: Trajectory, vmf: VmfParams = None, L: int = DEFAULT_DEGREE,
                    raster_config: RasterConfig = None) -> VisibilityField:
    """Accumulate gamma over the trajectory in visit order."""
    vmf = vmf or VmfParams()
    if len(trajectory) == 0:
        raise ParameterError("trajectory is empty")
    gamma = np.zeros((len(scene), num_coeffs(L)))
    real = ~scene.is_virtual
    for view in trajectory:
        b = view_visibility(scene, view, raster_config)
        b = np.where(real, b, 0.0)
        gamma += view_contribution(scene, view, b, vmf, L)
    return VisibilityField(gamma, len(trajectory), vmf, L, scene.is_virtual)


def am_gm_bound(v_sum, num_views):
    """``1 - (1 - V/|P|)**|P|`` with V clamped to [0, |P|]."""
    p = float(num_views)
    v = np.clip(np.asarray(v_sum, dtype=np.float64), 0.0, p)
    return np.clip(1.0 - (1.0 - v / p) ** num_views, 0.0, 1.0)


def query(field: VisibilityField, particle_index: int, d) -> float:
    i = int(particle_index)
    if not 0 <= i < len(field):
        raise ParameterError(f"particle index {i} out of range [0, {len(field)})")
    if field.virtual_mask[i]:
        return 0.0
    d = _check_unit(d)
    v = float(field.gamma[i] @ real_sh_basis(field.degree, d))
    return float(am_gm_bound(v, field.num_views))


def query_many(field: VisibilityField, indices, dirs) -> np.ndarray:
    """Vectorised :func:`query` for paired (index, direction) arrays."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if np.any((idx < 0) | (idx >= len(field))):
        raise ParameterError("particle index out of range")
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if len(idx) == 0:
        return np.zeros(0)
    raw = np.einsum("nk,nk->n", field.gamma[idx], real_sh_basis(field.degree, dirs))
    v = am_gm_bound(raw, field.num_views)
    v[field.virtual_mask[idx]] = 0.0
    return v


def query_view(field: VisibilityField, scene: Scene, camera):
    """(indices, visibilities) for every particle whose centre is in the frustum."""
    if len(field) != len(scene):
        raise ParameterError(f"field has {len(field)} particles, scene has {len(scene)}")
    idx = np.nonzero(camera.in_frustum(scene.positions))[0]
    dirs = view_directions(scene.positions[idx], camera.center, camera.forward)
    return idx, query_many(field, idx, dirs)


def particle_visibility_for_view(field: VisibilityField, scene: Scene, camera) -> np.ndarray:
    """Directional visibility of every particle as seen from ``camera`` (no frustum cut).

    The renderer needs a value for splats whose centre lies just outside the
    image but whose footprint reaches into it.
    """
    if len(field) != len(scene):
        raise ParameterError(f"field has {len(field)} particles, scene has {len(scene)}")
    dirs = view_directions(scene.positions, camera.center, camera.forward)
    return query_many(field, np.arange(len(scene)), dirs)


@dataclass(frozen=True)
class DensityControlConfig:
    rho: float = 100.0
    eta: float = 0.5
    eps_v: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError("rho must be positive")
        if not self.eta > -1:
            raise ParameterError("eta must exceed -1")
        if not 0 < self.eps_v <= 1:
            raise ParameterError("eps_v must lie in (0, 1]")

    @property
    def virtual_scale(self) -> float:
        return (3.0 * (1.0 + self.eta) / (4.0 * math.pi * self.rho)) ** (1.0 / 3.0)


def sample_virtual_positions(bounds, config: DensityControlConfig) -> np.ndarray:
    vol = bounds.volume
    if not vol > 0:
        raise ParameterError("density control needs bounds with positive volume")
    n = int(math.floor(config.rho * vol))
    # Philox is counter based: particle i always consumes the same counters
    rng = np.random.Generator(np.random.Philox(key=int(config.seed)))
    u = rng.random((n, 3))
    return bounds.min + u * bounds.extent


def virtual_particles(positions, scale, bounds, color_degree) -> Scene:
    n = len(positions)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return Scene(
        positions, rot, np.full((n, 3), scale), np.zeros(n),
        np.zeros((n, 3, num_coeffs(color_degree))), np.ones(n, bool), bounds, color_degree,
    )


def multiview_isotropic_visibility(scene: Scene, trajectory, raster_config=None) -> np.ndarray:
    keep = np.ones(len(scene))
    for view in trajectory:
        keep *= 1.0 - view_visibility(scene, view, raster_config)
    return 1.0 - keep


def density_control(scene: Scene, trajectory, config: DensityControlConfig = None,
                    raster_config: RasterConfig = None, return_all=False):
    """Append virtual particles to regions no training view has seen.

    With ``return_all`` also returns the candidate positions and their
    multi-view visibility, for diagnostics.
    """
    config = config or DensityControlConfig()
    pos = sample_virtual_positions(scene.bounds, config)
    cand = virtual_particles(pos, config.virtual_scale, scene.bounds, scene.color_degree)
    probe = scene.concat(cand)
    vt = multiview_isotropic_visibility(probe, trajectory, raster_config)[len(scene):]
    keep = vt <= config.eps_v
    aug = scene.concat(cand.subset(np.nonzero(keep)[0]))
    if return_all:
        return aug, pos, vt
    return aug
