"""Certification runs behind ``gavis oracle-check``.

Each check compares a fast path against its brute-force reference and
returns a JSON-ready record ``{name, passed, detail, ...}``.
"""

from __future__ import annotations

import numpy as np

from .fixtures import axis_camera, random_scene, stacked_pair, wall_scene
from .oracle import (
    GmmSpec, brute_force_composite, exact_multiview_visibility, fibonacci_sphere, huber_bound,
    mc_gmm_entropy, quadrature_project_sh, raymarch_transmittance,
)
from .raster import RasterConfig, rasterize, single_view_visibility
from .shmath import VmfParams, vmf_dir_vis, vmf_sh_coeffs
from .vfield import am_gm_bound


def _record(name, passed, detail, **extra):
    return dict(name=name, passed=bool(passed), detail=detail, **extra)


def check_vmf_expansion(kappa=1.0, degrees=range(5), n_dirs=100_000, tol=1e-3, recon_L=20, recon_tol=1e-6,
                        n_recon=1000, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((3, 3))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    params = VmfParams(kappa)
    worst = 0.0
    for d_p in centres:
        for L in degrees:
            ref = quadrature_project_sh(lambda d: np.exp(kappa * (d @ d_p - 1.0)), L, n_dirs)
            worst = max(worst, float(np.max(np.abs(vmf_sh_coeffs(d_p, params, L).coeffs - ref.coeffs))))
    # truncated expansion against the closed form
    dirs = fibonacci_sphere(n_recon)
    recon = 0.0
    for d_p in centres:
        approx = vmf_sh_coeffs(d_p, params, recon_L).evaluate(dirs)
        exact = np.array([vmf_dir_vis(d, d_p, params) for d in dirs])
        recon = max(recon, float(np.max(np.abs(approx - exact))))
    ok = worst <= tol and recon <= recon_tol
    return _record("vmf_expansion", ok, f"max coeff error {worst:.3g} (tol {tol}); "
                   f"L={recon_L} reconstruction error {recon:.3g} (tol {recon_tol})",
                   coeff_error=worst, recon_error=recon)


def check_am_gm(n_tuples=1000, seed=0):
    rng = np.random.default_rng(seed)
    violations = 0
    eq_err = 0.0
    for _ in range(n_tuples):
        n = int(rng.integers(1, 20))
        v = rng.random(n) ** rng.uniform(0.2, 5.0)
        if am_gm_bound(v.sum(), n) > exact_multiview_visibility(v) + 1e-15:
            violations += 1
        e = np.full(n, v[0])
        eq_err = max(eq_err, abs(float(am_gm_bound(e.sum(), n)) - exact_multiview_visibility(e)))
    fixture = float(am_gm_bound(1.2, 4))
    ok = violations == 0 and eq_err <= 1e-12 and abs(fixture - 0.7599) <= 1e-9
    return _record("am_gm_bound", ok, f"{violations} violations in {n_tuples} tuples; equal-tuple error "
                   f"{eq_err:.3g}; [0.3]x4 -> {fixture:.10f}", violations=violations)


def check_rasterizer(n_scenes=20, n_particles=100, size=128, seed=0, conservation_tol=1e-5, oracle_tol=1e-6,
                     vis_tol=5e-2):
    rc = RasterConfig()
    cam = axis_camera(size, size)
    cons = brute = 0.0
    for k in range(n_scenes):
        scene = random_scene(n_particles, seed=seed + k)
        out = rasterize(scene, cam, rc)
        cons = max(cons, float(np.max(np.abs(out.weight_sum + out.final_transmittance - 1.0))))
        w, T, dsum, _ = brute_force_composite(scene, cam, rc.dilation, rc.transmittance_cutoff, rc.alpha_clamp_max)
        brute = max(brute, float(np.max(np.abs(T - out.final_transmittance))),
                    float(np.max(np.abs(w.sum(axis=2) - out.weight_sum))),
                    float(np.max(np.abs(dsum - out.depth))))
    vis = 0.0
    for scene, target in _wall_fixtures():
        v = single_view_visibility(scene, cam, rc)[target]
        ref = raymarch_transmittance(scene, cam.center, scene.positions[target], 1e-3)
        vis = max(vis, abs(float(v) - ref))
    ok = cons <= conservation_tol and brute <= oracle_tol and vis <= vis_tol
    return _record("rasterizer", ok, f"conservation error {cons:.3g}; brute-force error {brute:.3g}; "
                   f"wall-fixture visibility error {vis:.3g}",
                   conservation_error=cons, oracle_error=brute, visibility_error=vis)


def _wall_fixtures():
    out = []
    for op in (0.3, 0.5, 0.95):
        for tgt in ((0.0, 0.0, 3.0), (0.1, 0.1, 3.0), (0.1, 0.0, 3.0)):
            s, t = wall_scene(opacity=op, targets=[tgt])
            out.append((s, int(t[0])))
    out.append((stacked_pair(), 1))
    return out


def check_entropy_bound(dumps, prior_cov, prior_mean, n_samples=100_000, sigmas=3.0):
    bad = []
    for i, d in enumerate(dumps):
        spec = GmmSpec.from_dump(d)
        hub = huber_bound(spec, prior_cov)
        est, se = mc_gmm_entropy(spec, prior_cov, n_samples, seed=i, prior_mean=prior_mean)
        if hub < est - sigmas * se:
            bad.append({"pixel": d["pixel"], "huber": hub, "mc": est, "stderr": se})
    ok = not bad
    return _record("entropy_bound", ok, f"{len(bad)} violations in {len(dumps)} mixtures", violations=bad)


def entropy_fixture(cfg):
    """Room-A-trained two-room entropy render plus mixture dumps for ``cfg``."""
    from .cli import _mixture_pixels, query_cameras
    from .scene import room_a_survey_trajectory, room_a_trajectory, synth_two_room, two_room_layout
    from .uncertainty import _render, mixture_dumps
    from .vfield import construct_field, density_control

    s = cfg["scene"]
    scene, occ = synth_two_room(s["room_size"], s["wall_spacing"], s["doorway_width"], seed=cfg["seed"])
    layout = two_room_layout(s["room_size"], s["wall_spacing"], s["doorway_width"])
    t = cfg["trajectory"]
    kw = dict(width=t["width"], height=t["height"], fov=t["fov"])
    traj = room_a_survey_trajectory(layout, **kw) if t["kind"] == "survey" else room_a_trajectory(layout, **kw)
    rc, uc = cfg.raster_config(), cfg.unc_config()
    field = construct_field(scene, traj, cfg.vmf(), cfg.L, rc)
    aug = density_control(scene, traj, cfg.density_config(), rc)
    cam = query_cameras(layout, **kw)[cfg["render"]["camera_index"]]
    render = _render(aug, field, cam, rc, uc, None)
    pix = _mixture_pixels(cam.height, cam.width, cfg["oracle"]["mixtures"], cfg["render"]["mixture_seed"])
    return mixture_dumps(aug, field, cam, pix, rc, uc, render=render)


def run_all(cfg) -> dict:
    o = cfg["oracle"]
    uc = cfg.unc_config()
    checks = [
        check_vmf_expansion(cfg.vmf().kappa),
        check_am_gm(o["am_gm_tuples"], cfg["seed"]),
        check_rasterizer(o["raster_scenes"], o["raster_particles"], o["image_size"], cfg["seed"]),
        check_entropy_bound(entropy_fixture(cfg), uc.prior_cov, uc.prior_mean, o["mc_samples"]),
    ]
    return {"version": 1, "passed": all(c["passed"] for c in checks), "checks": checks}

