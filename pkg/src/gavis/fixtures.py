"""Small deterministic scenes used by tests, benchmarks and ``oracle-check``."""

from __future__ import annotations

import math

import numpy as np

from .camera import CameraView
from .scene import Bounds, Scene
from .shmath import num_coeffs


def axis_camera(width=128, height=128, fov=math.pi / 2, eye=(0.0, 0.0, 0.0)) -> CameraView:
    """Camera at ``eye`` looking down world +z (x right, y down)."""
    c2w = np.eye(4)
    c2w[:3, 3] = eye
    return CameraView(c2w, width, height, fov, fov)


def random_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_scene(n=100, seed=0, color_degree=1, depth=(1.5, 4.0), spread=0.9) -> Scene:
    """Random anisotropic particles scattered in front of :func:`axis_camera`."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(depth[0], depth[1], n)
    xy = rng.uniform(-spread, spread, (n, 2)) * z[:, None]
    pos = np.column_stack([xy, z])
    k = num_coeffs(color_degree)
    sh = rng.normal(0.0, 0.3, (n, 3, k))
    return Scene(
        pos, random_quaternions(rng, n), rng.uniform(0.02, 0.3, (n, 3)), rng.uniform(0.05, 1.0, n),
        sh, np.zeros(n, bool), Bounds.of_points(pos), color_degree,
    )


def wall_scene(wall_z=2.0, half=1.5, spacing=0.2, scale=0.1, opacity=0.95, targets=((0.0, 0.0, 3.0),),
               target_scale=0.02, target_opacity=1.0):
    """A square wall of isotropic particles in the z = ``wall_z`` plane plus small targets.

    Returns (scene, target_indices); wall particles come first.
    """
    n_side = int(round(2 * half / spacing))
    g = -half + (np.arange(n_side) + 0.5) * spacing
    gx, gy = np.meshgrid(g, g, indexing="ij")
    wall = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, wall_z)])
    tg = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    pos = np.vstack([wall, tg])
    n = len(pos)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    scales = np.vstack([np.full((len(wall), 3), scale), np.full((len(tg), 3), target_scale)])
    opac = np.r_[np.full(len(wall), opacity), np.full(len(tg), target_opacity)]
    sh = np.zeros((n, 3, 1))
    scene = Scene(pos, rot, scales, opac, sh, np.zeros(n, bool), Bounds.of_points(pos), 0)
    return scene, np.arange(len(wall), n)


def stacked_pair(front_z=2.0, back_z=3.0, front_scale=0.3, back_scale=0.02):
    """Opaque particle A directly in front of a small particle B on the optical axis."""
    pos = np.array([[0.0, 0.0, front_z], [0.0, 0.0, back_z]])
    rot = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]])
    scl = np.array([[front_scale] * 3, [back_scale] * 3])
    return Scene(pos, rot, scl, [1.0, 1.0], np.zeros((2, 3, 1)), [False, False], Bounds.of_points(pos), 0)
