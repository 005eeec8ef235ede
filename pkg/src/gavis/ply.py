"""Reader for binary little-endian Gaussian-splat PLY exports.

Follows the common export layout: raw (pre-activation) ``opacity`` and
``scale_*`` values, quaternion ``rot_0..3`` in (w, x, y, z) order, DC colour
in ``f_dc_*`` and higher colour bands in ``f_rest_*`` stored channel-major.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, UnsupportedEncodingError
from .scene import Bounds, Scene
from .shmath import num_coeffs

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

REQUIRED = (
    ["x", "y", "z", "opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
    + [f"f_dc_{i}" for i in range(3)]
)


def _parse_header(f):
    first = f.readline()
    if first.strip() != b"ply":
        raise FormatError("missing 'ply' magic")
    elements = []
    fmt = None
    while True:
        line = f.readline()
        if not line:
            raise FormatError("unterminated PLY header")
        tok = line.decode("ascii", errors="replace").split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise FormatError("property before any element")
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], None))
            else:
                if tok[1] not in _TYPES:
                    raise FormatError(f"unknown property type {tok[1]!r}")
                elements[-1]["props"].append((tok[2], _TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    if fmt is None:
        raise FormatError("PLY header has no format line")
    if fmt.startswith("ascii"):
        raise UnsupportedEncodingError("ASCII PLY is not supported; export binary_little_endian")
    if fmt != "binary_little_endian":
        raise UnsupportedEncodingError(f"unsupported PLY encoding {fmt!r}")
    return elements


def _dtype(element):
    fields = []
    for name, t in element["props"]:
        if t is None:
            raise FormatError(f"list property {name!r} in element {element['name']!r} is not supported")
        fields.append((name, "<" + t))
    return np.dtype(fields)


def load_splat_ply(path) -> Scene:
    with open(Path(path), "rb") as f:
        elements = _parse_header(f)
        vertex = None
        for el in elements:
            dt = _dtype(el)
            if el["name"] == "vertex":
                raw = f.read(dt.itemsize * el["count"])
                if len(raw) < dt.itemsize * el["count"]:
                    raise FormatError("truncated vertex data")
                vertex = np.frombuffer(raw, dtype=dt, count=el["count"])
                break
            f.seek(dt.itemsize * el["count"], 1)
    if vertex is None:
        raise FormatError("PLY has no 'vertex' element")
    names = vertex.dtype.names
    for p in REQUIRED:
        if p not in names:
            raise FormatError(f"missing required vertex property {p!r}")

    n = len(vertex)
    n_rest = 0
    while f"f_rest_{n_rest}" in names:
        n_rest += 1
    per_channel = n_rest // 3
    degree = int(round(math.sqrt(per_channel + 1))) - 1
    if num_coeffs(degree) - 1 != per_channel or 3 * per_channel != n_rest:
        raise FormatError(f"{n_rest} f_rest properties do not form complete colour bands")

    def col(name):
        return vertex[name].astype(np.float64)

    pos = np.stack([col("x"), col("y"), col("z")], axis=1)
    raw_op = col("opacity")
    raw_scale = np.stack([col(f"scale_{i}") for i in range(3)], axis=1)
    rot = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    rest = np.stack([col(f"f_rest_{i}") for i in range(n_rest)], axis=1) if n_rest else np.zeros((n, 0))

    stacked = np.concatenate([pos, raw_op[:, None], raw_scale, rot, dc, rest], axis=1)
    bad = ~np.all(np.isfinite(stacked), axis=1)
    if np.any(bad):
        raise DataError(f"non-finite value in vertex {int(np.argmax(bad))}")
    qn = np.linalg.norm(rot, axis=1)
    if np.any(qn == 0):
        raise DataError(f"zero quaternion in vertex {int(np.argmax(qn == 0))}")

    opacity = 1.0 / (1.0 + np.exp(-raw_op))
    scale = np.exp(raw_scale)
    rot = rot / qn[:, None]

    k = num_coeffs(degree)
    sh = np.empty((n, 3, k))
    sh[:, :, 0] = dc
    if per_channel:
        sh[:, :, 1:] = rest.reshape(n, 3, per_channel)
        # exporters use the Condon-Shortley-phased basis; ours drops that phase
        sign = np.ones(k)
        for l in range(1, degree + 1):
            for m in range(-l, l + 1):
                sign[l * l + l + m] = (-1.0) ** m
        sh *= sign
    return Scene(pos, rot, scale, opacity, sh, np.zeros(n, bool), Bounds.of_points(pos), degree)


def write_splat_ply(scene: Scene, path):
    """Inverse of :func:`load_splat_ply` up to the activation round trip."""
    n = len(scene)
    k = num_coeffs(scene.color_degree)
    names = ["x", "y", "z"] + [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity"] + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)]
    sign = np.ones(k)
    for l in range(1, scene.color_degree + 1):
        for m in range(-l, l + 1):
            sign[l * l + l + m] = (-1.0) ** m
    sh = scene.color_sh * sign
    op = np.clip(scene.opacities, 1e-7, 1 - 1e-7)
    cols = [scene.positions, sh[:, :, 0], sh[:, :, 1:].reshape(n, -1),
            np.log(op / (1 - op))[:, None], np.log(scene.scales), scene.rotations]
    data = np.concatenate(cols, axis=1).astype("<f4")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {nm}" for nm in names] + ["end_header"]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())
