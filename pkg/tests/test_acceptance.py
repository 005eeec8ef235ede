"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one ``C<n> PASS|FAIL: ...`` line; the lines are printed
together in the ``acceptance criteria`` section at the end of the run.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from gavis.camera import look_at
from gavis.certify import check_am_gm, check_entropy_bound, check_rasterizer, check_vmf_expansion
from gavis.cli import _mixture_pixels, query_cameras
from gavis.fixtures import axis_camera, random_scene, wall_scene
from gavis.metrics import ause_v, render_gt_visibility
from gavis.planner import PlannerConfig, run_active_mapping
from gavis.raster import max_threads, set_threads
from gavis.scene import Trajectory
from gavis.shmath import VmfParams
from gavis.uncertainty import UncertaintyConfig, _render, mixture_dumps, render_entropy
from gavis.vfield import DensityControlConfig, construct_field, density_control, query, query_many


def _line(n, ok, text):
    return f"C{n} {'PASS' if ok else 'FAIL'}: {text}"


def _timed(fn, *a, **kw):
    t = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t


def test_c1_vmf_expansion(report):
    rec, dt = _timed(check_vmf_expansion, kappa=1.0, degrees=range(5), n_dirs=100_000, tol=1e-3,
                     recon_L=20, recon_tol=1e-6, n_recon=1000)
    ok = rec["passed"] and dt < 10
    report(_line(1, ok, f"{rec['detail']}; {dt:.1f} s (limit 10 s)"))
    assert rec["coeff_error"] <= 1e-3 and rec["recon_error"] <= 1e-6
    assert dt < 10


def test_c2_am_gm(report):
    rec, dt = _timed(check_am_gm, 1000, seed=0)
    ok = rec["passed"] and dt < 1
    report(_line(2, ok, f"{rec['detail']}; {dt:.2f} s (limit 1 s)"))
    assert rec["passed"]
    assert dt < 1


def test_c3_rasterizer(report):
    rec, dt = _timed(check_rasterizer, n_scenes=20, n_particles=100, size=128, seed=0)
    ok = rec["passed"] and dt < 60
    report(_line(3, ok, f"{rec['detail']}; {dt:.1f} s (limit 60 s)"))
    assert rec["conservation_error"] <= 1e-5
    assert rec["oracle_error"] <= 1e-6
    assert rec["visibility_error"] <= 5e-2
    assert dt < 60


def test_c4_entropy_bound(survey, report):
    uc = UncertaintyConfig()
    cam = query_cameras(survey["layout"])[0]
    t = time.perf_counter()
    render = _render(survey["aug"], survey["field"], cam, None, uc, None)
    dumps = mixture_dumps(survey["aug"], survey["field"], cam, _mixture_pixels(128, 128, 200, 0),
                          unc_config=uc, render=render)
    rec = check_entropy_bound(dumps, uc.prior_cov, uc.prior_mean, n_samples=100_000)
    dt = time.perf_counter() - t + survey["build_seconds"]
    ok = rec["passed"] and dt < 120
    report(_line(4, ok, f"{rec['detail']} (Huber >= MC - 3 se, 1e5 samples); {dt:.1f} s incl. "
                        f"field build (limit 120 s)"))
    assert len(dumps) == 200
    assert rec["passed"], rec["violations"]
    assert dt < 120


def test_c5_unseen_separation(survey, report):
    cam = query_cameras(survey["layout"])[0]
    t = time.perf_counter()
    em = render_entropy(survey["aug"], survey["field"], cam)
    gt = render_gt_visibility(survey["occ"], survey["traj"], cam)
    h = em.entropy
    unseen, seen = h[gt == 1].mean(), h[gt == 0].mean()
    a_ent = ause_v(h, gt)
    a_const = ause_v(np.zeros_like(h), gt)
    dt = time.perf_counter() - t + survey["build_seconds"]
    ratio = unseen / seen
    ok = ratio > 1.5 and a_ent < a_const and dt < 60
    report(_line(5, ok, f"mean entropy unseen {unseen:.4g} vs seen {seen:.4g} (ratio {ratio:.1f}, need > 1.5); "
                        f"AUSE-V {a_ent:.4g} vs constant {a_const:.4g}; {dt:.1f} s (limit 60 s)"))
    assert gt.sum() > 0 and (gt == 0).sum() > 0
    assert ratio > 1.5
    assert a_ent < a_const
    assert dt < 60


def _hemisphere_dirs(rng, n, sign):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d[:, 2] = sign * np.abs(d[:, 2])
    return d


def _front_back(scene, eyes, kappa, rng):
    f = construct_field(scene, Trajectory([axis_camera(64, 64, eye=(x, 0.0, 0.0)) for x in eyes]),
                        VmfParams(kappa), 2)
    idx = np.repeat(np.nonzero(f.gamma[:, 0] > 0)[0], 200)
    front = query_many(f, idx, _hemisphere_dirs(rng, len(idx), +1.0)).mean()
    back = query_many(f, idx, _hemisphere_dirs(rng, len(idx), -1.0)).mean()
    return front, back


def test_c6_anisotropy(report):
    t = time.perf_counter()
    scene, _ = wall_scene(targets=[])  # wall in z = 2, observed from one side (z < 2) by one camera
    rng = np.random.default_rng(0)
    f1, b1 = _front_back(scene, (0.0,), 1.0, rng)
    f0, b0 = _front_back(scene, (0.0,), 0.0, rng)
    dt = time.perf_counter() - t
    # context only: a few nearby frontal views saturate the front side of the estimator
    f3, b3 = _front_back(scene, (-0.5, 0.0, 0.5), 1.0, rng)
    ok = b1 < 0.5 * f1 and abs(f0 - b0) <= 1e-9 and dt < 10
    report(_line(6, ok, f"kappa=1 back/front {b1:.4f}/{f1:.4f} = {b1 / f1:.3f} (need < 0.5); "
                        f"kappa=0 |front - back| = {abs(f0 - b0):.2g}; {dt:.1f} s (limit 10 s); "
                        f"with 3 frontal views the ratio is {b3 / f3:.3f}"))
    assert b1 < 0.5 * f1
    assert abs(f0 - b0) <= 1e-9
    assert dt < 10


@pytest.fixture(scope="module")
def c7_result(survey):
    scene, occ, layout, traj = survey["scene"], survey["occ"], survey["layout"], survey["traj"]
    (aug, pos, vt), dt = _timed(density_control, scene, traj, DensityControlConfig(), return_all=True)
    keep = vt <= DensityControlConfig().eps_v
    seen = np.zeros(len(pos), bool)
    for cam in traj:
        todo = np.nonzero(~seen)[0]
        hit = todo[cam.in_frustum(pos[todo])]
        seen[hit] = ~occ.segment_blocked(pos[hit], cam.center)
    in_b = layout.room_of(pos) == 1
    return {
        "scale": DensityControlConfig(rho=100, eta=0.5).virtual_scale,
        "retained_unseen": float((~seen[keep]).mean()),
        "retained_in_b": float(in_b[keep].mean()),
        "free_pruned": float((~keep[seen]).mean()),
        "seconds": dt,
        "matches_mapper": aug == survey["aug"],
    }


def test_c7_density_control(c7_result, report):
    r = c7_result
    scale_ok = abs(r["scale"] - 0.15294) <= 1e-5
    ok = scale_ok and r["retained_unseen"] >= 0.95 and r["retained_in_b"] >= 0.95 and r["free_pruned"] >= 0.95 \
        and r["seconds"] < 30
    report(_line(7, ok, f"s = {r['scale']:.6f} from (3(1+eta)/(4 pi rho))^(1/3), target 0.15294 +- 1e-5 "
                        f"{'met' if scale_ok else 'not met (the target is off by 5.2e-5 from its own formula)'}; "
                        f"retained virtuals unseen {r['retained_unseen']:.1%}, in room B {r['retained_in_b']:.1%}; "
                        f"free-space virtuals pruned {r['free_pruned']:.1%}; {r['seconds']:.1f} s (limit 30 s)"))
    assert r["scale"] == pytest.approx((4.5 / (400 * math.pi)) ** (1 / 3), abs=1e-15)
    assert r["retained_unseen"] >= 0.95
    assert r["retained_in_b"] >= 0.95
    assert r["free_pruned"] >= 0.95
    assert r["matches_mapper"]
    assert r["seconds"] < 30


@pytest.mark.xfail(strict=True, reason="0.15294 disagrees with the closed form it is derived from "
                                       "(which gives 0.152992); the formula is kept")
def test_c7_scale_literal(c7_result):
    assert abs(c7_result["scale"] - 0.15294) <= 1e-5


DOOR_CENTRE = np.array([4.0, 2.0, 1.5])


def _toward_room_b(view, layout):
    return bool(layout.room_of(view.center) == 1 or view.in_frustum(DOOR_CENTRE[None])[0])


def test_c8_active_mapping(survey, report):
    uc = UncertaintyConfig(correlation="hook", correlation_lambda=1.0)
    t = time.perf_counter()
    finals = {"greedy": [], "random": []}
    toward = 0
    for seed in range(5):
        for sel in ("greedy", "random"):
            cfg = PlannerConfig(mode="SE2", num_candidates=128, steps=10, seed=seed, selection=sel)
            log = run_active_mapping(survey["scene"], survey["occ"], survey["traj"], cfg, unc_config=uc,
                                     mapper=survey["mapper"])
            cov = [m[0] for m in log.per_step_metrics]
            assert cov == sorted(cov)
            finals[sel].append(cov[-1])
            if sel == "greedy":
                toward += _toward_room_b(log.chosen_views[0], survey["layout"])
    dt = time.perf_counter() - t + survey["build_seconds"]
    g, r = np.mean(finals["greedy"]), np.mean(finals["random"])
    ok = g > r and toward >= 4 and dt < 600
    report(_line(8, ok, f"final vis_coverage greedy {g:.3f} vs random {r:.3f} "
                        f"(greedy {np.round(finals['greedy'], 3).tolist()}, random "
                        f"{np.round(finals['random'], 3).tolist()}); first pick toward room B on {toward}/5; "
                        f"{dt:.0f} s (limit 600 s)"))
    assert g > r
    assert toward >= 4
    assert dt < 600


def _best_of(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _ring(n, radius=3.0, size=16):
    views = []
    for k in range(n):
        a = 2 * math.pi * k / n
        eye = [radius * math.cos(a), 0.5 * math.sin(3 * a), radius * math.sin(a)]
        views.append(look_at(eye, [0, 0, 0.0], up=(0, 1, 0), width=size, height=size))
    return Trajectory(views)


def test_c9_performance(two_room, survey, report):
    scene, occ, layout = two_room
    lines, ok = [], True
    # (a) construction time is linear in the number of views
    views = list(survey["traj"])[:24]
    construct_field(scene, Trajectory(views[:2]))  # warm-up
    t1 = _best_of(lambda: construct_field(scene, Trajectory(views[:12])), 3)
    t2 = _best_of(lambda: construct_field(scene, Trajectory(views)), 3)
    ratio = t2 / t1
    ok &= 1.4 <= ratio <= 2.6
    lines.append(f"construction x2 views -> x{ratio:.2f} time (need 2 +- 30%)")
    # (b) query cost does not depend on the number of views
    small = random_scene(300, seed=0, depth=(-1.0, 1.0), spread=0.5)
    f10 = construct_field(small, _ring(10))
    f1000 = construct_field(small, _ring(1000))
    rng = np.random.default_rng(0)
    idx = rng.integers(0, len(small), 200_000)
    dirs = rng.standard_normal((len(idx), 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pairs = [(int(i), d) for i, d in zip(idx[:2000], dirs[:2000])]

    def batch(f):
        return lambda: query_many(f, idx, dirs)

    def scalar(f):
        return lambda: [query(f, i, d) for i, d in pairs]

    drift = []
    for make in (batch, scalar):
        ta, tb = [], []
        for _ in range(5):  # interleaved so slow phases of the machine hit both
            ta.append(_best_of(make(f10), 3))
            tb.append(_best_of(make(f1000), 3))
        drift.append(abs(min(tb) - min(ta)) / min(ta))
    ok &= max(drift) < 0.10
    lines.append(f"query drift |P|=10 -> 1000: batch {drift[0]:.1%}, scalar {drift[1]:.1%} (need < 10%)")
    # (c) 128x128 entropy render over a 10k-particle augmented scene, one thread
    m = survey["mapper"]
    extra = 10_000 - len(survey["aug"])
    unused = np.setdiff1d(np.arange(len(m.candidates)),
                          np.nonzero((1.0 - m.keep_prod)[len(m.scene):] <= m.dc.eps_v)[0])[:max(extra, 0)]
    big = survey["aug"].concat(m.candidates.subset(unused))
    assert len(big) >= 10_000
    cam = query_cameras(layout)[0]
    prev = max_threads()
    set_threads(1)
    try:
        render_entropy(big, survey["field"], cam)
        tr = _best_of(lambda: render_entropy(big, survey["field"], cam), 3)
    finally:
        set_threads(prev)
    ok &= tr < 1.0
    lines.append(f"{len(big)}-particle 128x128 entropy render {tr:.3f} s single-threaded (need < 1 s)")
    report(_line(9, ok, "; ".join(lines)))
    assert 1.4 <= ratio <= 2.6
    assert max(drift) < 0.10
    assert tr < 1.0


C10_CFG = ["--set", 'trajectory.kind="ring"', "--set", "trajectory.width=48", "--set", "trajectory.height=48",
           "--set", "planner.steps=2", "--set", "planner.num_candidates=4", "--set", "planner.width=32",
           "--set", "planner.height=32", "--set", "render.mixture_pixels=20", "--set", "oracle.mc_samples=10000",
           "--set", "oracle.mixtures=10", "--set", "oracle.raster_scenes=2", "--set", "oracle.am_gm_tuples=100"]
C10_COMMANDS = [["synth-scene"], ["build-field"], ["render-uncertainty", "--dump-mixtures"], ["plan"],
                ["oracle-check"]]


def _cli_run(out, threads):
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    env.pop("GAVIS_THREADS", None)
    for cmd in C10_COMMANDS:
        r = subprocess.run([sys.executable, "-m", "gavis.cli", cmd[0], "--out-dir", str(out), "--threads",
                            str(threads), *C10_CFG, *cmd[1:]], env=env, capture_output=True, text=True,
                           timeout=900)
        assert r.returncode == 0, (cmd, r.stderr)
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_c10_determinism(tmp_path, report):
    runs = {name: _cli_run(tmp_path / name, n) for name, n in (("a", 1), ("b", 1), ("c", 3))}
    files = sorted(runs["a"])
    same_rerun = runs["a"] == runs["b"]
    same_threads = runs["a"] == runs["c"]
    ok = same_rerun and same_threads and len(files) == 12
    report(_line(10, ok, f"{len(files)} artifacts from all 5 commands byte-identical on re-run: {same_rerun}; "
                         f"with --threads 1 vs 3: {same_threads}"))
    assert len(files) == 12
    assert same_rerun
    assert same_threads
