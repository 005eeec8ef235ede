"""``gavis`` command line: synth-scene, build-field, render-uncertainty, plan, oracle-check.

Every command reads one JSON run config (``--config``, optional) with
``--set dotted.key=value`` overrides and writes deterministic artifacts
under ``paths.root``.  Exit codes: 0 ok, 2 parameter or input error,
3 internal invariant violation, 4 oracle failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .config import RunConfig
from .errors import GavisError, InvariantError, ParameterError
from .io import (
    dump_json, load_occluders, load_scene, load_trajectory, save_occluders, save_scene,
    save_trajectory, write_pgm,
)
from .raster import set_threads

EXIT_OK, EXIT_PARAM, EXIT_INVARIANT, EXIT_ORACLE = 0, 2, 3, 4


def _layout(cfg):
    from .scene import two_room_layout

    s = cfg["scene"]
    return two_room_layout(s["room_size"], s["wall_spacing"], s["doorway_width"])


def _ensure_dir(path):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)


def query_cameras(layout, width=128, height=128, fov=math.pi / 2):
    """Evaluation views from room A looking along the rooms' long axis, and from the doorway into B."""
    from .camera import look_at

    sx, sy, _ = layout.room_size
    z = min(1.5, 0.5 * layout.room_size[2])
    kw = dict(width=width, height=height, fov_h=fov, fov_v=fov)
    return [
        look_at([0.25 * sx, 0.5 * sy, z], [2.0 * sx, 0.5 * sy, z], **kw),
        look_at([0.25 * sx, 0.25 * sy, z], [1.75 * sx, 0.6 * sy, z], **kw),
    ]


def cmd_synth_scene(cfg: RunConfig, args):
    from .scene import Trajectory, room_a_survey_trajectory, room_a_trajectory, synth_two_room

    s = cfg["scene"]
    scene, occ = synth_two_room(s["room_size"], s["wall_spacing"], s["doorway_width"], seed=cfg["seed"])
    layout = _layout(cfg)
    t = cfg["trajectory"]
    kw = dict(width=t["width"], height=t["height"], fov=t["fov"])
    if t["kind"] == "survey":
        traj = room_a_survey_trajectory(layout, **kw)
    else:
        traj = room_a_trajectory(layout, **kw)
    for key in ("scene", "occluders", "trajectory", "cameras"):
        _ensure_dir(cfg.path(key))
    save_scene(scene, cfg.path("scene"))
    save_occluders(occ, cfg.path("occluders"))
    save_trajectory(traj, cfg.path("trajectory"))
    save_trajectory(Trajectory(query_cameras(layout, **kw)), cfg.path("cameras"))
    print(f"scene: {len(scene)} particles, {len(occ)} occluders, {len(traj)} training views")
    return EXIT_OK


def cmd_build_field(cfg: RunConfig, args):
    from .vfield import construct_field, density_control, save_field

    scene = load_scene(cfg.path("scene"))
    traj = load_trajectory(cfg.path("trajectory"))
    rc = cfg.raster_config()
    field = construct_field(scene, traj, cfg.vmf(), cfg.L, rc)
    if not np.all(np.isfinite(field.gamma)):
        raise InvariantError("field coefficients are not finite")
    aug = density_control(scene, traj, cfg.density_config(), rc)
    for key in ("field", "augmented_scene"):
        _ensure_dir(cfg.path(key))
    save_field(field, cfg.path("field"))
    save_scene(aug, cfg.path("augmented_scene"))
    print(f"field: {len(field)} particles x {field.gamma.shape[1]} coefficients; "
          f"{len(aug) - len(scene)} virtual particles retained")
    return EXIT_OK


def _mixture_pixels(h, w, n, seed):
    rng = np.random.default_rng(seed)
    flat = rng.choice(h * w, size=min(n, h * w), replace=False)
    return [(int(i // w), int(i % w)) for i in flat]


def cmd_render_uncertainty(cfg: RunConfig, args):
    from .io import _read_json
    from .uncertainty import _render, mixture_dumps
    from .vfield import VisibilityField

    scene = load_scene(cfg.path("augmented_scene"))
    field = VisibilityField.from_dict(_read_json(cfg.path("field")))
    cams = load_trajectory(cfg.path("cameras"))
    k = cfg["render"]["camera_index"]
    if not 0 <= k < len(cams):
        raise ParameterError(f"render.camera_index {k} out of range for {len(cams)} cameras")
    cam = cams[k]
    rc, uc = cfg.raster_config(), cfg.unc_config()
    render = _render(scene, field, cam, rc, uc, None)
    emap = render.map
    total = emap.visible_weight + emap.invisible_mass + emap.final_transmittance
    if not np.all(np.isfinite(emap.entropy)) or np.max(np.abs(total - 1.0)) > 1e-6:
        raise InvariantError("entropy render violates weight conservation or produced non-finite values")
    _ensure_dir(cfg.path("entropy"))
    write_pgm(cfg.path("entropy"), emap.entropy)
    if cfg["render"]["dump_mixtures"] or args.dump_mixtures:
        pix = _mixture_pixels(cam.height, cam.width, cfg["render"]["mixture_pixels"], cfg["render"]["mixture_seed"])
        dumps = mixture_dumps(scene, field, cam, pix, rc, uc, render=render)
        _ensure_dir(cfg.path("mixtures"))
        dump_json({"version": 1, "mixtures": dumps}, cfg.path("mixtures"))
    print(f"entropy: mean {float(emap.entropy.mean()):.6g}, max {float(emap.entropy.max()):.6g}")
    return EXIT_OK


def cmd_plan(cfg: RunConfig, args):
    from .planner import run_active_mapping

    scene = load_scene(cfg.path("scene"))
    occ = load_occluders(cfg.path("occluders"))
    traj = load_trajectory(cfg.path("trajectory"))

    def progress(step, idx, metrics):
        print(f"step {step}: candidate {idx}, coverage {metrics[0]:.4f}", flush=True)

    log = run_active_mapping(scene, occ, traj, cfg.planner_config(), cfg.vmf(), cfg.L, cfg.density_config(),
                             cfg.raster_config(), cfg.unc_config(), progress=progress)
    cov = [m[0] for m in log.per_step_metrics]
    if any(b < a for a, b in zip(cov, cov[1:])):
        raise InvariantError("vis_coverage decreased while appending views")
    for key in ("mapping_log", "mapping_csv"):
        _ensure_dir(cfg.path(key))
    log.save_json(cfg.path("mapping_log"))
    log.save_csv(cfg.path("mapping_csv"))
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig, args):
    from .certify import run_all

    report = run_all(cfg)
    _ensure_dir(cfg.path("report"))
    dump_json(report, cfg.path("report"))
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    return EXIT_OK if report["passed"] else EXIT_ORACLE


COMMANDS = {
    "synth-scene": cmd_synth_scene,
    "build-field": cmd_build_field,
    "render-uncertainty": cmd_render_uncertainty,
    "plan": cmd_plan,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry by dotted path (repeatable)")
    common.add_argument("--out-dir", help="shorthand for --set paths.root=DIR")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $GAVIS_THREADS or all cores)")
    p = argparse.ArgumentParser(prog="gavis", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "render-uncertainty":
            sp.add_argument("--dump-mixtures", action="store_true", help="also write per-pixel mixture dumps")
    sub.add_parser("print-config", parents=[common], help="print the resolved run config")
    return p


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("GAVIS_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ParameterError(f"GAVIS_THREADS must be an integer, got '{env}'") from None
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set)
        if args.out_dir:
            overrides.append(f"paths.root={args.out_dir}")
        cfg = RunConfig.load(args.config, overrides)
        n = _threads(args)
        if n is not None:
            if n < 1:
                raise ParameterError("--threads must be >= 1")
            set_threads(n)
        if args.command == "print-config":
            import json

            print(json.dumps(cfg.data, indent=2, sort_keys=True))
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except InvariantError as e:
        print(f"gavis: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except FileNotFoundError as e:
        print(f"gavis: missing file: {e.filename}", file=sys.stderr)
        return EXIT_PARAM
    except (GavisError, ValueError) as e:
        print(f"gavis: {e}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
