"""Pinhole cameras and EWA projection of 3D Gaussians.

Conventions: poses are camera-to-world, right-handed; the camera looks down
+z with +x right and +y down, the image origin is the top-left corner and
pixel (row i, col j) has its centre at (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError

DEFAULT_DILATION = 0.3
DEFAULT_NEAR = 0.01


@dataclass(frozen=True, eq=False)
class CameraView:
    c2w: np.ndarray
    width: int = 128
    height: int = 128
    fov_h: float = math.pi / 2
    fov_v: float = math.pi / 2
    near: float = DEFAULT_NEAR

    def __post_init__(self):
        m = np.array(self.c2w, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(m)):
            raise ParameterError("camera pose must be finite")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ParameterError("camera pose rotation must be a proper rotation")
        m.setflags(write=False)
        object.__setattr__(self, "c2w", m)
        if int(self.width) < 1 or int(self.height) < 1:
            raise ParameterError("image width and height must be >= 1")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        for name in ("fov_h", "fov_v"):
            v = float(getattr(self, name))
            if not (0.0 < v < math.pi):
                raise ParameterError(f"{name} must lie in (0, pi), got {v}")
            object.__setattr__(self, name, v)
        if not float(self.near) > 0:
            raise ParameterError("near must be positive")
        object.__setattr__(self, "near", float(self.near))

    def __eq__(self, other):
        if not isinstance(other, CameraView):
            return NotImplemented
        return (
            np.array_equal(self.c2w, other.c2w)
            and (self.width, self.height, self.fov_h, self.fov_v, self.near)
            == (other.width, other.height, other.fov_h, other.fov_v, other.near)
        )

    def __hash__(self):
        return hash((self.c2w.tobytes(), self.width, self.height, self.fov_h, self.fov_v, self.near))

    @property
    def center(self) -> np.ndarray:
        return self.c2w[:3, 3].copy()

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:3, :3].copy()

    @property
    def forward(self) -> np.ndarray:
        return self.c2w[:3, 2].copy()

    @property
    def fx(self) -> float:
        return 0.5 * self.width / math.tan(0.5 * self.fov_h)

    @property
    def fy(self) -> float:
        return 0.5 * self.height / math.tan(0.5 * self.fov_v)

    @property
    def cx(self) -> float:
        return 0.5 * self.width

    @property
    def cy(self) -> float:
        return 0.5 * self.height

    def world_to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.c2w[:3, 3]) @ self.c2w[:3, :3]

    def project_points(self, points):
        """Pixel coordinates (N, 2) and camera-frame depth (N,) of world points."""
        pc = self.world_to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def in_frustum(self, points) -> np.ndarray:
        uv, z = self.project_points(points)
        with np.errstate(invalid="ignore"):
            return (
                (z > self.near)
                & (uv[..., 0] >= 0)
                & (uv[..., 0] < self.width)
                & (uv[..., 1] >= 0)
                & (uv[..., 1] < self.height)
            )

    def pixel_rays(self) -> np.ndarray:
        """Unit world-space ray directions through every pixel centre, (H, W, 3)."""
        j = np.arange(self.width) + 0.5
        i = np.arange(self.height) + 0.5
        xs = (j - self.cx) / self.fx
        ys = (i - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = xs[None, :]
        d[..., 1] = ys[:, None]
        d[..., 2] = 1.0
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.c2w[:3, :3].T

    def with_size(self, width, height) -> "CameraView":
        return CameraView(self.c2w, width, height, self.fov_h, self.fov_v, self.near)


def look_at(eye, target, up=(0.0, 0.0, 1.0), **kwargs) -> CameraView:
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(f)
    if n == 0:
        raise ParameterError("eye and target coincide")
    f /= n
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(f, up)
    if np.linalg.norm(x) < 1e-9:
        # looking along the up axis: any perpendicular right vector works
        x = np.cross(f, [1.0, 0.0, 0.0] if abs(f[0]) < 0.9 else [0.0, 1.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, y, f, eye
    return CameraView(c2w, **kwargs)


def yaw_pitch_view(eye, yaw, pitch=0.0, **kwargs) -> CameraView:
    """Camera at ``eye`` looking along heading ``yaw`` (about +z) tilted by ``pitch``."""
    f = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), math.sin(pitch)])
    return look_at(eye, np.asarray(eye, dtype=np.float64) + f, **kwargs)


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrices from (..., 4) quaternions in (w, x, y, z) order."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def covariances(rotations, scales) -> np.ndarray:
    r = quat_to_rotmat(rotations)
    s2 = np.asarray(scales, dtype=np.float64) ** 2
    return np.einsum("nij,nj,nkj->nik", r, s2, r)


class ProjectedSplats(NamedTuple):
    """Image-space splats of the particles that survived culling.

    ``index`` maps each splat back to its particle; ``conic`` holds the
    (a, b, c) entries of the 2x2 precision [[a, b], [b, c]].
    """

    index: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    radius: np.ndarray


class ImageSpaceSplat(NamedTuple):
    mean2d: np.ndarray
    conic: np.ndarray
    depth: float
    radius: float
    cov2d: np.ndarray


class _Culled:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "CULLED"

    def __bool__(self):
        return False


CULLED = _Culled()


def project_gaussians(positions, cov3d, camera: CameraView, dilation=DEFAULT_DILATION) -> ProjectedSplats:
    """First-order EWA projection with culling, vectorised over particles."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    cov3d = np.asarray(cov3d, dtype=np.float64).reshape(-1, 3, 3)
    rot = camera.c2w[:3, :3]
    pc = (positions - camera.c2w[:3, 3]) @ rot
    z = pc[:, 2]
    ok = z >= camera.near
    idx = np.nonzero(ok)[0]
    pc, z = pc[idx], z[idx]
    fx, fy = camera.fx, camera.fy
    tx, ty = pc[:, 0], pc[:, 1]
    u = fx * tx / z + camera.cx
    v = fy * ty / z + camera.cy

    # Jacobian evaluated at the mean pulled back to 1.3x the frustum edge, so
    # grazing particles far outside the view do not explode into huge splats
    lim_x = 1.3 * math.tan(0.5 * camera.fov_h)
    lim_y = 1.3 * math.tan(0.5 * camera.fov_v)
    jx = np.clip(tx / z, -lim_x, lim_x) * z
    jy = np.clip(ty / z, -lim_y, lim_y) * z
    m = len(idx)
    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * jx / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * jy / (z * z)
    cov_cam = np.einsum("ji,njk,kl->nil", rot, cov3d[idx], rot)
    cov2 = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))

    d2 = float(dilation) ** 2
    a = cov2[:, 0, 0] + d2
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + d2
    det = a * c - b * b
    good = det > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        conic = np.stack([c / det, -b / det, a / det], axis=1)
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = 3.0 * np.sqrt(lam_max)
    inside = (
        (u + radius >= 0)
        & (u - radius <= camera.width)
        & (v + radius >= 0)
        & (v - radius <= camera.height)
    )
    keep = good & inside
    return ProjectedSplats(
        index=idx[keep],
        mean2d=np.stack([u, v], axis=1)[keep],
        cov2d=cov2[keep],
        conic=conic[keep],
        depth=z[keep],
        radius=radius[keep],
    )


def project_particle(particle, camera: CameraView, dilation=DEFAULT_DILATION):
    """Project one particle; returns an ImageSpaceSplat or ``CULLED``."""
    cov = covariances(np.asarray(particle.rotation)[None], np.asarray(particle.scale)[None])
    ps = project_gaussians(np.asarray(particle.position)[None], cov, camera, dilation)
    if len(ps.index) == 0:
        return CULLED
    a, b, c = ps.conic[0]
    return ImageSpaceSplat(
        mean2d=ps.mean2d[0],
        conic=np.array([[a, b], [b, c]]),
        depth=float(ps.depth[0]),
        radius=float(ps.radius[0]),
        cov2d=ps.cov2d[0],
    )
