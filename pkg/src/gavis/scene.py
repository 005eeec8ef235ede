"""Scene data model: Gaussian particles, bounds, trajectories and the
two-room synthetic generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraView, covariances
from .errors import ParameterError
from .occluders import OccluderSet, Rectangle
from .shmath import num_coeffs

SH_C0 = 0.28209479177387814


def rgb_to_sh_dc(rgb):
    """DC colour coefficient that renders as ``rgb`` (colour = SH + 0.5)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


@dataclass(frozen=True, eq=False)
class GaussianParticle:
    position: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    scale: np.ndarray
    opacity: float
    color_sh: np.ndarray  # (3, (L_c + 1)**2)
    is_virtual: bool = False

    def __post_init__(self):
        for name, shape in (("position", (3,)), ("rotation", (4,)), ("scale", (3,))):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ParameterError(f"{name} must have shape {shape}")
            object.__setattr__(self, name, a)
        sh = np.array(self.color_sh, dtype=np.float64)
        if sh.ndim != 2 or sh.shape[0] != 3:
            raise ParameterError("color_sh must have shape (3, K)")
        object.__setattr__(self, "color_sh", sh)
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "is_virtual", bool(self.is_virtual))
        _validate_particles(
            self.position[None], self.rotation[None], self.scale[None],
            np.array([self.opacity]), np.array([self.is_virtual]),
        )

    def __eq__(self, other):
        if not isinstance(other, GaussianParticle):
            return NotImplemented
        return (
            np.array_equal(self.position, other.position)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.scale, other.scale)
            and self.opacity == other.opacity
            and np.array_equal(self.color_sh, other.color_sh)
            and self.is_virtual == other.is_virtual
        )


def _validate_particles(pos, rot, scale, opacity, virtual):
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(rot)) and np.all(np.isfinite(scale))):
        raise ParameterError("particle fields must be finite")
    qn = np.linalg.norm(rot, axis=1)
    if np.any(np.abs(qn - 1.0) > 1e-6):
        raise ParameterError("particle rotations must be unit quaternions")
    if np.any(scale <= 0):
        raise ParameterError("particle scales must be positive")
    if np.any((opacity < 0) | (opacity > 1)) or not np.all(np.isfinite(opacity)):
        raise ParameterError("particle opacity must lie in [0, 1]")
    if np.any(virtual & (opacity != 0)):
        raise ParameterError("virtual particles must have zero opacity")


@dataclass(frozen=True, eq=False)
class Bounds:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64).reshape(3)
        hi = np.array(self.max, dtype=np.float64).reshape(3)
        if np.any(hi < lo):
            raise ParameterError("bounds max must be >= min")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def __eq__(self, other):
        return isinstance(other, Bounds) and np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max)

    @property
    def extent(self):
        return self.max - self.min

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    def expanded(self, frac):
        pad = frac * self.extent
        return Bounds(self.min - pad, self.max + pad)

    def contains(self, points, tol=1e-9):
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.min - tol) & (p <= self.max + tol), axis=-1)

    @classmethod
    def of_points(cls, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(p) == 0:
            return cls(np.zeros(3), np.zeros(3))
        return cls(p.min(axis=0), p.max(axis=0))


class Scene:
    """Ordered set of Gaussian particles stored column-wise.

    Arrays are read-only; particle identity is its index.
    """

    def __init__(self, positions, rotations, scales, opacities, color_sh, is_virtual=None,
                 bounds: Bounds | None = None, color_degree: int | None = None):
        pos = np.array(positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        rot = np.array(rotations, dtype=np.float64).reshape(n, 4)
        scl = np.array(scales, dtype=np.float64).reshape(n, 3)
        opa = np.array(opacities, dtype=np.float64).reshape(n)
        sh = np.array(color_sh, dtype=np.float64)
        if color_degree is None:
            k = sh.shape[-1] if sh.ndim == 3 else 1
            color_degree = int(round(math.sqrt(k))) - 1
        k = num_coeffs(color_degree)
        if n == 0:
            sh = sh.reshape(0, 3, k)
        if sh.shape != (n, 3, k):
            raise ParameterError(f"color_sh must have shape ({n}, 3, {k}), got {sh.shape}")
        virt = np.zeros(n, dtype=bool) if is_virtual is None else np.array(is_virtual, dtype=bool).reshape(n)
        _validate_particles(pos, rot, scl, opa, virt)
        if bounds is None:
            bounds = Bounds.of_points(pos)
        if n and not np.all(bounds.expanded(0.1).contains(pos)):
            raise ParameterError("particle positions must lie inside the scene bounds expanded by 10%")
        for a in (pos, rot, scl, opa, sh, virt):
            a.setflags(write=False)
        self.positions = pos
        self.rotations = rot
        self.scales = scl
        self.opacities = opa
        self.color_sh = sh
        self.is_virtual = virt
        self.bounds = bounds
        self.color_degree = int(color_degree)
        self._cov = None

    def __len__(self):
        return len(self.positions)

    def __repr__(self):
        return f"Scene(n={len(self)}, virtual={int(self.is_virtual.sum())}, color_degree={self.color_degree})"

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.color_degree == other.color_degree
            and self.bounds == other.bounds
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("positions", "rotations", "scales", "opacities", "color_sh", "is_virtual")
            )
        )

    @property
    def covariances(self):
        if self._cov is None:
            c = covariances(self.rotations, self.scales) if len(self) else np.zeros((0, 3, 3))
            c.setflags(write=False)
            self._cov = c
        return self._cov

    @property
    def particles(self) -> list[GaussianParticle]:
        return [self.particle(i) for i in range(len(self))]

    def particle(self, i) -> GaussianParticle:
        return GaussianParticle(
            self.positions[i], self.rotations[i], self.scales[i],
            float(self.opacities[i]), self.color_sh[i], bool(self.is_virtual[i]),
        )

    @classmethod
    def from_particles(cls, particles: Sequence[GaussianParticle], bounds=None, color_degree=None):
        if not particles:
            cd = 0 if color_degree is None else color_degree
            return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                       np.zeros((0, 3, num_coeffs(cd))), np.zeros(0, bool), bounds or Bounds.of_points([]), cd)
        return cls(
            [p.position for p in particles], [p.rotation for p in particles],
            [p.scale for p in particles], [p.opacity for p in particles],
            [p.color_sh for p in particles], [p.is_virtual for p in particles],
            bounds, color_degree,
        )

    @classmethod
    def empty(cls, bounds=None, color_degree=0):
        return cls.from_particles([], bounds, color_degree)

    def subset(self, idx) -> "Scene":
        idx = np.asarray(idx)
        return Scene(self.positions[idx], self.rotations[idx], self.scales[idx], self.opacities[idx],
                     self.color_sh[idx], self.is_virtual[idx], self.bounds, self.color_degree)

    def concat(self, other: "Scene") -> "Scene":
        if other.color_degree != self.color_degree:
            raise ParameterError("cannot concatenate scenes with different colour degrees")
        return Scene(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.scales, other.scales]),
            np.concatenate([self.opacities, other.opacities]),
            np.concatenate([self.color_sh, other.color_sh]),
            np.concatenate([self.is_virtual, other.is_virtual]),
            self.bounds, self.color_degree,
        )

    def permuted(self, perm) -> "Scene":
        return self.subset(np.asarray(perm))


@dataclass(frozen=True)
class Trajectory:
    views: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        for v in self.views:
            if not isinstance(v, CameraView):
                raise ParameterError("trajectory entries must be CameraView")

    def __len__(self):
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, i):
        return self.views[i]

    def appended(self, view: CameraView) -> "Trajectory":
        return Trajectory(self.views + (view,))

    def __add__(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(self.views + tuple(other.views))


# -- synthetic two-room scene ------------------------------------------------

WALL_OPACITY = 0.95


def grid_count(length: float, spacing: float) -> int:
    """ceil(length / spacing), tolerant to binary rounding of the quotient."""
    q = length / spacing
    return max(1, int(math.ceil(q - 1e-9 * max(1.0, q))))


@dataclass(frozen=True)
class TwoRoomLayout:
    """Geometry of the generator output, used by fixtures and metrics."""

    room_size: tuple
    wall_spacing: float
    doorway_width: float

    @property
    def shared_wall_x(self) -> float:
        return float(self.room_size[0])

    @property
    def doorway_span(self):
        c = 0.5 * self.room_size[1]
        h = 0.5 * self.doorway_width
        return c - h, c + h

    def room_of(self, points):
        """0 for room A (x < shared wall), 1 for room B."""
        return (np.asarray(points)[..., 0] >= self.shared_wall_x).astype(int)

    def room_a_center(self):
        sx, sy, sz = self.room_size
        return np.array([0.5 * sx, 0.5 * sy, 0.5 * sz])

    def room_b_center(self):
        sx, sy, sz = self.room_size
        return np.array([1.5 * sx, 0.5 * sy, 0.5 * sz])


def _face_points(corner, eu, ev, spacing):
    nu = grid_count(float(np.linalg.norm(eu)), spacing)
    nv = grid_count(float(np.linalg.norm(ev)), spacing)
    su = (np.arange(nu) + 0.5) / nu
    sv = (np.arange(nv) + 0.5) / nv
    uu, vv = np.meshgrid(su, sv, indexing="ij")
    return corner + uu.reshape(-1, 1) * eu + vv.reshape(-1, 1) * ev


def _room_faces(x0, sx, sy, sz):
    """Six inward-facing faces of an axis-aligned box room starting at x0.

    Each face is (corner, edge_u, edge_v) with edge_u x edge_v pointing inward.
    """
    X = np.array([sx, 0.0, 0.0])
    Y = np.array([0.0, sy, 0.0])
    Z = np.array([0.0, 0.0, sz])
    o = np.array([x0, 0.0, 0.0])
    return {
        "floor": (o, X, Y),
        "ceiling": (o + Z, Y, X),
        "wall_y0": (o, Z, X),
        "wall_y1": (o + Y, X, Z),
        "wall_x0": (o, Y, Z),
        "wall_x1": (o + X, Z, Y),
    }


def synth_two_room(room_size=(4.0, 4.0, 3.0), wall_spacing=0.2, doorway_width=1.0, seed=7):
    """Two adjacent box rooms (A at x in [0, sx], B at [sx, 2 sx]) sharing a
    wall with a full-height doorway centred along y.

    Returns ``(scene, occluders)``; the occluder rectangles mirror the walls.
    """
    room_size = tuple(float(v) for v in room_size)
    if len(room_size) != 3 or any(not (v > 0 and math.isfinite(v)) for v in room_size):
        raise ParameterError("room_size components must be positive")
    if not (wall_spacing > 0 and math.isfinite(wall_spacing)):
        raise ParameterError("wall_spacing must be positive")
    sx, sy, sz = room_size
    if not (0 < doorway_width <= sy):
        raise ParameterError(f"doorway_width must lie in (0, {sy}], got {doorway_width}")

    layout = TwoRoomLayout(room_size, float(wall_spacing), float(doorway_width))
    rng = np.random.default_rng(seed)
    lo, hi = layout.doorway_span
    half = 0.5 * doorway_width

    positions, colors = [], []
    rects = []
    palettes = ([0.75, 0.45, 0.35], [0.35, 0.5, 0.75])
    for room, x0 in enumerate((0.0, sx)):
        faces = _room_faces(x0, sx, sy, sz)
        for name, (corner, eu, ev) in faces.items():
            shared = (room == 0 and name == "wall_x1") or (room == 1 and name == "wall_x0")
            if shared:
                rects.extend(_doorway_split(corner, eu, ev, lo, hi))
                if room == 1:
                    continue  # the shared wall is tiled once, from room A
                pts = _face_points(corner, eu, ev, wall_spacing)
                pts = pts[np.abs(pts[:, 1] - 0.5 * sy) >= half - 1e-9]
            else:
                rects.append(Rectangle(corner, eu, ev, True, two_sided=False))
                pts = _face_points(corner, eu, ev, wall_spacing)
            base = np.array(palettes[room]) * (0.7 if name in ("floor", "ceiling") else 1.0)
            jitter = rng.uniform(-0.08, 0.08, size=(len(pts), 3))
            positions.append(pts)
            colors.append(np.clip(base + jitter, 0.0, 1.0))

    pos = np.concatenate(positions) if positions else np.zeros((0, 3))
    rgb = np.concatenate(colors) if colors else np.zeros((0, 3))
    n = len(pos)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    scale = np.full((n, 3), 0.5 * wall_spacing)
    opac = np.full(n, WALL_OPACITY)
    sh = rgb_to_sh_dc(rgb).reshape(n, 3, 1)
    bounds = Bounds([0.0, 0.0, 0.0], [2 * sx, sy, sz])
    scene = Scene(pos, rot, scale, opac, sh, np.zeros(n, bool), bounds, 0)
    occ = OccluderSet(tuple(rects), sample_density=100.0)
    return scene, occ


def _doorway_split(corner, eu, ev, lo, hi):
    """Pieces of a shared-wall face left of and right of the doorway (along y)."""
    out = []
    # the y-edge of the face is whichever edge runs along y
    if abs(eu[1]) > 0:
        ey, other, y_is_u = eu, ev, True
    else:
        ey, other, y_is_u = ev, eu, False
    y0 = corner[1]
    length = ey[1]
    unit = ey / length
    for a, b in ((0.0, lo - y0), (hi - y0, length)):
        if b - a <= 1e-12:
            continue
        c = corner + a * unit
        e = (b - a) * unit
        if y_is_u:
            out.append(Rectangle(c, e, other, True, two_sided=False))
        else:
            out.append(Rectangle(c, other, e, True, two_sided=False))
    return out


def two_room_layout(room_size=(4.0, 4.0, 3.0), wall_spacing=0.2, doorway_width=1.0) -> TwoRoomLayout:
    return TwoRoomLayout(tuple(float(v) for v in room_size), float(wall_spacing), float(doorway_width))


def room_a_trajectory(layout: TwoRoomLayout, n_views=5, width=128, height=128, fov=math.pi / 2,
                      start_yaw=math.pi) -> Trajectory:
    """Views spread around a fixed start position in room A, none aimed at the doorway."""
    from .camera import yaw_pitch_view

    eye = layout.room_a_center()
    eye[0] = 0.4 * layout.room_size[0]
    eye[2] = min(1.5, 0.5 * layout.room_size[2])
    step = 2 * math.pi / (n_views + 1)
    views = []
    for k in range(n_views):
        # the (n_views + 1)-th heading, which would face the doorway, is skipped
        yaw = start_yaw + (k - (n_views - 1) / 2) * step
        views.append(yaw_pitch_view(eye, yaw, 0.0, width=width, height=height, fov_h=fov, fov_v=fov))
    return Trajectory(views)


def room_a_survey_trajectory(layout: TwoRoomLayout, grid=(0.2, 0.5, 0.8), n_yaw=8, pitches=(-0.7, 0.0, 0.7),
                             width=128, height=128, fov=math.pi / 2, height_z=1.5) -> Trajectory:
    """Dense survey of room A that never has the doorway in view.

    Views sit on a grid of positions inside room A; every (yaw, pitch) pose
    whose frustum contains part of the doorway opening is dropped, so room B
    stays unobserved.
    """
    from .camera import yaw_pitch_view

    sx, sy, sz = layout.room_size
    lo, hi = layout.doorway_span
    g = np.linspace(0.0, 1.0, 7)
    door = np.array([[sx, lo + a * (hi - lo), b * sz] for a in g for b in g])
    z = min(height_z, 0.5 * sz)
    views = []
    for fx in grid:
        for fy in grid:
            eye = np.array([fx * sx, fy * sy, z])
            for k in range(n_yaw):
                for p in pitches:
                    v = yaw_pitch_view(eye, 2 * math.pi * k / n_yaw, p, width=width, height=height,
                                       fov_h=fov, fov_v=fov)
                    if not np.any(v.in_frustum(door)):
                        views.append(v)
    return Trajectory(views)
