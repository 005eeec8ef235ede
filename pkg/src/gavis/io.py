"""On-disk formats: scene / trajectory / occluder JSON and 16-bit PGM images."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .camera import DEFAULT_NEAR, CameraView
from .errors import FormatError, ParseError, VersionError
from .occluders import OccluderSet, Rectangle
from .scene import Bounds, Scene, Trajectory
from .shmath import num_coeffs

SCENE_VERSION = 1
OCCLUDER_VERSION = 1


def _read_json(path):
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("file is not valid UTF-8", e.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON: {e.msg}", offset) from None


def dump_json(obj, path):
    """Deterministic JSON writer (sorted keys are not used: key order is fixed by construction)."""
    text = json.dumps(obj, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def scene_to_dict(scene: Scene) -> dict:
    parts = []
    for i in range(len(scene)):
        parts.append({
            "pos": scene.positions[i].tolist(),
            "rot": scene.rotations[i].tolist(),
            "scale": scene.scales[i].tolist(),
            "opacity": float(scene.opacities[i]),
            "sh": scene.color_sh[i].tolist(),
            "virtual": bool(scene.is_virtual[i]),
        })
    return {
        "version": SCENE_VERSION,
        "color_degree": scene.color_degree,
        "bounds": {"min": scene.bounds.min.tolist(), "max": scene.bounds.max.tolist()},
        "particles": parts,
    }


def scene_from_dict(d: dict) -> Scene:
    if not isinstance(d, dict):
        raise FormatError("scene JSON must be an object")
    if d.get("version") != SCENE_VERSION:
        raise VersionError(f"unsupported scene version {d.get('version')!r}, expected {SCENE_VERSION}")
    try:
        cd = int(d["color_degree"])
        bounds = Bounds(d["bounds"]["min"], d["bounds"]["max"])
        parts = d["particles"]
        k = num_coeffs(cd)
        n = len(parts)
        pos = np.array([p["pos"] for p in parts], dtype=np.float64).reshape(n, 3)
        rot = np.array([p["rot"] for p in parts], dtype=np.float64).reshape(n, 4)
        scl = np.array([p["scale"] for p in parts], dtype=np.float64).reshape(n, 3)
        opa = np.array([p["opacity"] for p in parts], dtype=np.float64).reshape(n)
        sh = np.array([p["sh"] for p in parts], dtype=np.float64).reshape(n, 3, k)
        virt = np.array([bool(p["virtual"]) for p in parts], dtype=bool).reshape(n)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"invalid scene JSON: {e}") from None
    return Scene(pos, rot, scl, opa, sh, virt, bounds, cd)


def save_scene(scene: Scene, path):
    dump_json(scene_to_dict(scene), path)


def load_scene(path) -> Scene:
    return scene_from_dict(_read_json(path))


def camera_to_dict(cam: CameraView) -> dict:
    d = {
        "c2w": cam.c2w.reshape(-1).tolist(),
        "width": cam.width,
        "height": cam.height,
        "fov_h": cam.fov_h,
        "fov_v": cam.fov_v,
    }
    if cam.near != DEFAULT_NEAR:
        d["near"] = cam.near
    return d


def camera_from_dict(d: dict) -> CameraView:
    try:
        return CameraView(
            np.array(d["c2w"], dtype=np.float64).reshape(4, 4),
            int(d["width"]), int(d["height"]), float(d["fov_h"]), float(d["fov_v"]),
            float(d.get("near", DEFAULT_NEAR)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"invalid camera entry: {e}") from None


def save_trajectory(traj: Trajectory, path):
    dump_json([camera_to_dict(v) for v in traj], path)


def load_trajectory(path) -> Trajectory:
    data = _read_json(path)
    if not isinstance(data, list):
        raise FormatError("trajectory JSON must be a list of camera objects")
    return Trajectory([camera_from_dict(v) for v in data])


def save_occluders(occ: OccluderSet, path):
    dump_json({
        "version": OCCLUDER_VERSION,
        "sample_density": occ.sample_density,
        "rectangles": [
            {
                "corner": r.corner.tolist(),
                "edge_u": r.edge_u.tolist(),
                "edge_v": r.edge_v.tolist(),
                "opaque": r.opaque,
                "two_sided": r.two_sided,
            }
            for r in occ.rectangles
        ],
    }, path)


def load_occluders(path) -> OccluderSet:
    d = _read_json(path)
    if not isinstance(d, dict):
        raise FormatError("occluder JSON must be an object")
    if d.get("version") != OCCLUDER_VERSION:
        raise VersionError(f"unsupported occluder version {d.get('version')!r}")
    try:
        rects = [
            Rectangle(r["corner"], r["edge_u"], r["edge_v"], bool(r["opaque"]), bool(r.get("two_sided", True)))
            for r in d["rectangles"]
        ]
        return OccluderSet(tuple(rects), float(d["sample_density"]))
    except (KeyError, TypeError) as e:
        raise FormatError(f"invalid occluder JSON: {e}") from None


def write_pgm(path, image, lo=None, hi=None):
    """Write a 2D array as binary 16-bit PGM plus a JSON sidecar with the range.

    Values are mapped linearly from [lo, hi] (default: the image min/max) to
    0..65535.  Returns the sidecar path.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("write_pgm expects a 2D image")
    finite = img[np.isfinite(img)]
    lo = float(finite.min()) if lo is None and finite.size else (0.0 if lo is None else float(lo))
    hi = float(finite.max()) if hi is None and finite.size else (0.0 if hi is None else float(hi))
    span = hi - lo
    if span > 0:
        q = np.clip((img - lo) / span, 0.0, 1.0)
    else:
        q = np.zeros_like(img)
    q = np.nan_to_num(q, nan=0.0)
    data = np.round(q * 65535.0).astype(">u2")
    h, w = img.shape
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())
    side = path.with_suffix(path.suffix + ".json")
    dump_json({"width": w, "height": h, "min": lo, "max": hi, "maxval": 65535}, side)
    return side


def read_pgm(path):
    """Inverse of :func:`write_pgm` (returns the quantised values in [lo, hi])."""
    path = Path(path)
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    data = np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {"min": 0.0, "max": 1.0}
    return meta["min"] + data.astype(np.float64) / maxval * (meta["max"] - meta["min"])


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
