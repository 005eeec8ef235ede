import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gavis.errors import DataError, FormatError, ParameterError, ParseError, UnsupportedEncodingError, VersionError
from gavis.fixtures import random_scene
from gavis.io import (
    load_occluders, load_scene, load_trajectory, read_pgm, save_occluders, save_scene, save_trajectory,
    scene_from_dict, scene_to_dict, write_pgm,
)
from gavis.ply import REQUIRED, load_splat_ply, write_splat_ply
from gavis.scene import Bounds, GaussianParticle, Scene, grid_count, room_a_trajectory, synth_two_room, two_room_layout

PROPS = REQUIRED


def _ply_bytes(rows, props=PROPS, fmt="binary_little_endian"):
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(rows)}"]
    head += [f"property float {p}" for p in props]
    head.append("end_header")
    body = b"".join(struct.pack("<" + "f" * len(props), *r) for r in rows)
    return ("\n".join(head) + "\n").encode("ascii") + body


def _row(x=0.0, y=0.0, z=0.0, opacity=0.0, scale=(0.0, 0.0, 0.0), rot=(1.0, 0.0, 0.0, 0.0), dc=(0.0, 0.0, 0.0)):
    return [x, y, z, opacity, *scale, *rot, *dc]


def test_ply_minimal_activations(tmp_path):
    p = tmp_path / "one.ply"
    p.write_bytes(_ply_bytes([_row()]))
    s = load_splat_ply(p)
    assert len(s) == 1
    assert s.opacities[0] == 0.5
    assert np.all(s.scales[0] == 1.0)


def test_ply_three_vertex_fixture_round_trips(tmp_path):
    rows = [
        _row(0.25, -1.5, 2.0, 1.0, (-1.0, -2.0, -0.5), (2.0, 0.0, 0.0, 0.0), (0.1, 0.2, 0.3)),
        _row(1.0, 0.125, -3.0, -2.0, (0.0, 0.5, -3.0), (0.0, 0.0, 3.0, 4.0), (0.0, 0.0, 0.0)),
        _row(-0.75, 2.5, 0.5, 0.0, (-4.0, -4.0, -4.0), (1.0, 1.0, 1.0, 1.0), (-1.0, 0.5, 0.0)),
    ]
    p = tmp_path / "three.ply"
    p.write_bytes(_ply_bytes(rows))
    s = load_splat_ply(p)
    expect = np.array([r[:3] for r in rows], dtype=np.float32).astype(np.float64)
    assert np.array_equal(s.positions, expect)
    np.testing.assert_allclose(s.rotations[1], [0, 0, 0.6, 0.8])
    save_scene(s, tmp_path / "three.json")
    back = load_scene(tmp_path / "three.json")
    assert back == s
    assert np.array_equal(back.positions, expect)


def test_ply_rejects_ascii(tmp_path):
    p = tmp_path / "a.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n")
    with pytest.raises(UnsupportedEncodingError):
        load_splat_ply(p)


def test_ply_missing_property_named(tmp_path):
    props = [q for q in PROPS if q != "rot_2"]
    r = _row()
    del r[PROPS.index("rot_2")]
    p = tmp_path / "m.ply"
    p.write_bytes(_ply_bytes([r], props))
    with pytest.raises(FormatError, match="rot_2"):
        load_splat_ply(p)


def test_ply_non_finite_reports_vertex(tmp_path):
    rows = [_row(), _row(x=float("nan"))]
    p = tmp_path / "n.ply"
    p.write_bytes(_ply_bytes(rows))
    with pytest.raises(DataError, match="vertex 1"):
        load_splat_ply(p)


def test_ply_writer_inverse(tmp_path):
    s = random_scene(20, seed=3, color_degree=2)
    write_splat_ply(s, tmp_path / "w.ply")
    back = load_splat_ply(tmp_path / "w.ply")
    np.testing.assert_allclose(back.positions, s.positions, rtol=1e-6)
    np.testing.assert_allclose(back.opacities, s.opacities, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(back.scales, s.scales, rtol=1e-5)
    np.testing.assert_allclose(back.color_sh, s.color_sh, rtol=1e-5, atol=1e-6)


def test_two_room_counts_and_determinism():
    s1, o1 = synth_two_room(seed=7)
    s2, o2 = synth_two_room(seed=7)
    assert s1 == s2 and o1 == o2
    assert json.dumps(scene_to_dict(s1)) == json.dumps(scene_to_dict(s2))
    # independent count: 5 full faces per room plus the shared wall once, minus the doorway columns
    face = {"xy": grid_count(4, 0.2) ** 2, "xz": grid_count(4, 0.2) * grid_count(3, 0.2),
            "yz": grid_count(4, 0.2) * grid_count(3, 0.2)}
    assert face["xz"] == 300
    full = 2 * (2 * face["xy"] + 2 * face["xz"] + face["yz"])
    ys = (np.arange(20) + 0.5) * 0.2
    door_cols = int(np.sum(np.abs(ys - 2.0) < 0.5 - 1e-9))
    assert len(s1) == full + (20 - door_cols) * 15
    assert np.all(s1.opacities == 0.95) and np.all(s1.scales == 0.1)


def test_two_room_open_shared_wall_and_errors():
    s, occ = synth_two_room(doorway_width=4.0)
    assert not np.any(np.isclose(s.positions[:, 0], 4.0))
    with pytest.raises(ParameterError, match="doorway_width"):
        synth_two_room(doorway_width=5.0)
    with pytest.raises(ParameterError):
        synth_two_room(room_size=(4, -1, 3))
    with pytest.raises(ParameterError):
        synth_two_room(wall_spacing=0.0)


def test_occluder_edges_orthogonal(two_room):
    _, occ, _ = two_room
    for r in occ.rectangles:
        assert abs(float(np.dot(r.edge_u, r.edge_v))) <= 1e-9


def test_scene_round_trips(tmp_path, two_room):
    scene, occ, layout = two_room
    for s in (Scene.empty(), scene, random_scene(5, seed=1, color_degree=3)):
        save_scene(s, tmp_path / "s.json")
        back = load_scene(tmp_path / "s.json")
        assert back == s
    assert back.color_sh.shape[1:] == (3, 16)
    save_occluders(occ, tmp_path / "o.json")
    assert load_occluders(tmp_path / "o.json") == occ
    traj = room_a_trajectory(layout)
    save_trajectory(traj, tmp_path / "t.json")
    assert list(load_trajectory(tmp_path / "t.json")) == list(traj)


def test_scene_json_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"version": 1, "particles": [')
    with pytest.raises(ParseError) as e:
        load_scene(p)
    assert e.value.offset >= 0
    d = scene_to_dict(random_scene(2, seed=0))
    d["version"] = 2
    with pytest.raises(VersionError):
        scene_from_dict(d)


def test_scene_bounds_invariant():
    with pytest.raises(ParameterError):
        Scene([[5.0, 0, 0]], [[1, 0, 0, 0]], [[0.1] * 3], [0.5], np.zeros((1, 3, 1)),
              bounds=Bounds([0, 0, 0], [1, 1, 1]))


def test_particle_view_matches_columns():
    s = random_scene(4, seed=2)
    p = s.particle(2)
    assert isinstance(p, GaussianParticle)
    assert Scene.from_particles(s.particles, s.bounds, s.color_degree) == s


@given(st.integers(1, 20), st.integers(1, 20), st.floats(-10, 10), st.floats(0.1, 10))
def test_pgm_round_trip(w, h, lo, span):
    import tempfile
    from pathlib import Path

    img = np.linspace(lo, lo + span, w * h).reshape(h, w)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        raw = path.read_bytes()
    assert raw.startswith(f"P5\n{w} {h}\n65535\n".encode())
    np.testing.assert_allclose(back, img, atol=span / 65535 * 0.51 + 1e-12)


def test_pgm_constant_and_sidecar(tmp_path):
    side = write_pgm(tmp_path / "c.pgm", np.full((2, 3), 4.0))
    meta = json.loads(side.read_text())
    assert meta == {"width": 3, "height": 2, "min": 4.0, "max": 4.0, "maxval": 65535}
    assert math.isclose(read_pgm(tmp_path / "c.pgm")[0, 0], 4.0)
