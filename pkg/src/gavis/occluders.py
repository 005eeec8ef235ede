"""Ground-truth planar occluders used by oracles and evaluation metrics.

The method under test never sees these; they only feed the ray-cast
classification, the VIS coverage metric and the ground-truth visibility maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

_T_EPS = 1e-7


@dataclass(frozen=True, eq=False)
class Rectangle:
    """Planar rectangle ``corner + a*edge_u + b*edge_v`` for a, b in [0, 1].

    A one-sided rectangle (``two_sided=False``) can only be *seen* from the
    side its normal ``edge_u x edge_v`` points to; it blocks rays from both
    sides either way.
    """

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    opaque: bool = True
    two_sided: bool = True

    def __post_init__(self):
        for name in ("corner", "edge_u", "edge_v"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        dot = float(np.dot(self.edge_u, self.edge_v))
        if abs(dot) > 1e-9:
            raise ParameterError(f"rectangle edges must be orthogonal (dot = {dot})")
        object.__setattr__(self, "opaque", bool(self.opaque))
        object.__setattr__(self, "two_sided", bool(self.two_sided))

    def __eq__(self, other):
        return (
            isinstance(other, Rectangle)
            and np.array_equal(self.corner, other.corner)
            and np.array_equal(self.edge_u, other.edge_u)
            and np.array_equal(self.edge_v, other.edge_v)
            and self.opaque == other.opaque
            and self.two_sided == other.two_sided
        )

    @property
    def normal(self):
        return np.cross(self.edge_u, self.edge_v)

    @property
    def area(self) -> float:
        return float(np.linalg.norm(self.normal))

    def sample(self, density: float):
        """Cell-centre grid of roughly ``density`` points per unit area."""
        lu = float(np.linalg.norm(self.edge_u))
        lv = float(np.linalg.norm(self.edge_v))
        step = 1.0 / math.sqrt(density)
        nu = max(1, int(round(lu / step)))
        nv = max(1, int(round(lv / step)))
        a = (np.arange(nu) + 0.5) / nu
        b = (np.arange(nv) + 0.5) / nv
        aa, bb = np.meshgrid(a, b, indexing="ij")
        pts = self.corner + aa.reshape(-1, 1) * self.edge_u + bb.reshape(-1, 1) * self.edge_v
        return pts, np.full(len(pts), self.area / len(pts))


@dataclass(frozen=True)
class OccluderSet:
    rectangles: tuple = ()
    sample_density: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "rectangles", tuple(self.rectangles))
        if not self.sample_density > 0:
            raise ParameterError("sample_density must be positive")

    def __len__(self):
        return len(self.rectangles)

    @property
    def opaque(self):
        return [r for r in self.rectangles if r.opaque]

    def _arrays(self, only_opaque=True):
        rects = self.opaque if only_opaque else list(self.rectangles)
        if not rects:
            z = np.zeros((0, 3))
            return z, z, z, np.zeros(0, bool)
        return (
            np.stack([r.corner for r in rects]),
            np.stack([r.edge_u for r in rects]),
            np.stack([r.edge_v for r in rects]),
            np.array([r.two_sided for r in rects]),
        )

    def sample_surface(self):
        """Surface sample points, their area weights, rectangle ids and normals."""
        pts, wts, ids = [], [], []
        for k, r in enumerate(self.rectangles):
            if r.area <= 0:
                continue
            p, w = r.sample(self.sample_density)
            pts.append(p)
            wts.append(w)
            ids.append(np.full(len(p), k))
        if not pts:
            return np.zeros((0, 3)), np.zeros(0), np.zeros(0, int)
        return np.concatenate(pts), np.concatenate(wts), np.concatenate(ids)

    def segment_blocked(self, points, target) -> np.ndarray:
        """True where the open segment point -> target crosses an opaque rectangle.

        Hits within a relative distance of 1e-7 of either end are ignored so
        that points lying on a rectangle are not blocked by it (or its twin).
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        target = np.asarray(target, dtype=np.float64)
        corner, eu, ev, _ = self._arrays()
        blocked = np.zeros(len(p), dtype=bool)
        seg = target - p
        for c, u, v in zip(corner, eu, ev):
            n = np.cross(u, v)
            denom = seg @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((c - p) @ n) / denom
            ok = (np.abs(denom) > 1e-15) & (t > _T_EPS) & (t < 1.0 - _T_EPS)
            if not np.any(ok):
                continue
            h = p + t[:, None] * seg - c
            a = (h @ u) / (u @ u)
            b = (h @ v) / (v @ v)
            blocked |= ok & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        return blocked

    def ray_cast(self, origin, dirs):
        """Nearest visible opaque hit along each ray.

        Returns ``(t, rect_index)`` with ``t = inf`` and index -1 on a miss.
        One-sided rectangles are only hit from their front side.
        """
        origin = np.asarray(origin, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        rects = list(self.rectangles)
        best_t = np.full(len(d), np.inf)
        best_k = np.full(len(d), -1)
        for k, r in enumerate(rects):
            if not r.opaque:
                continue
            n = r.normal
            denom = d @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = float((r.corner - origin) @ n) / denom
            ok = (np.abs(denom) > 1e-15) & (t > 0)
            if not r.two_sided:
                ok &= denom < 0
            h = origin + t[:, None] * d - r.corner
            u, v = r.edge_u, r.edge_v
            with np.errstate(invalid="ignore"):
                a = (h @ u) / (u @ u)
                b = (h @ v) / (v @ v)
            hit = ok & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1) & (t < best_t)
            best_t = np.where(hit, t, best_t)
            best_k = np.where(hit, k, best_k)
        return best_t, best_k

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the nearest opaque rectangle."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.full(len(p), np.inf)
        for r in self.opaque:
            u, v = r.edge_u, r.edge_v
            rel = p - r.corner
            a = np.clip((rel @ u) / (u @ u), 0, 1)
            b = np.clip((rel @ v) / (v @ v), 0, 1)
            q = r.corner + a[:, None] * u + b[:, None] * v
            out = np.minimum(out, np.linalg.norm(p - q, axis=1))
        return out

    def seen_from(self, points, normals, two_sided, camera) -> np.ndarray:
        """Points on occluder faces that ``camera`` observes without occlusion."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        vis = camera.in_frustum(p)
        to_cam = camera.center - p
        facing = two_sided | (np.einsum("ij,ij->i", to_cam, normals) > 0)
        vis &= facing
        if np.any(vis):
            idx = np.nonzero(vis)[0]
            vis[idx] &= ~self.segment_blocked(p[idx], camera.center)
        return vis
