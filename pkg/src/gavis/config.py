"""Run configuration: every module config, file paths and a global seed in one JSON document."""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import fields

import numpy as np

from .errors import ParameterError
from .io import _read_json, dump_json
from .planner import PlannerConfig
from .raster import RasterConfig
from .shmath import VmfParams
from .uncertainty import UncertaintyConfig
from .vfield import DEFAULT_DEGREE, DensityControlConfig

TRAJECTORY_KINDS = ("survey", "ring")


def _dc_defaults(cls):
    out = {}
    for f in fields(cls):
        v = getattr(cls(), f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def default_config() -> dict:
    return {
        "seed": 7,
        "scene": {"room_size": [4.0, 4.0, 3.0], "wall_spacing": 0.2, "doorway_width": 1.0},
        "trajectory": {"kind": "survey", "width": 128, "height": 128, "fov": math.pi / 2},
        "vmf": {"kappa": VmfParams().kappa, "L": DEFAULT_DEGREE},
        "raster": _dc_defaults(RasterConfig),
        "density": _dc_defaults(DensityControlConfig),
        "uncertainty": _dc_defaults(UncertaintyConfig),
        "planner": dict(_dc_defaults(PlannerConfig), mode="SE2"),
        "render": {"camera_index": 0, "dump_mixtures": False, "mixture_pixels": 200, "mixture_seed": 0},
        "oracle": {"mc_samples": 100_000, "mixtures": 200, "raster_scenes": 20, "raster_particles": 100,
                   "image_size": 128, "am_gm_tuples": 1000},
        "paths": {
            "root": ".",
            "scene": "scene.json",
            "occluders": "occluders.json",
            "trajectory": "trajectory.json",
            "cameras": "query_cameras.json",
            "field": "field.json",
            "augmented_scene": "scene_aug.json",
            "entropy": "entropy.pgm",
            "mixtures": "mixtures.json",
            "mapping_log": "mapping_log.json",
            "mapping_csv": "mapping_log.csv",
            "report": "oracle_report.json",
        },
    }


def _same_kind(default, value) -> bool:
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    if isinstance(default, int):
        return isinstance(value, int)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(base: dict, over: dict, where=""):
    for k, v in over.items():
        key = f"{where}{k}"
        if k not in base:
            raise ParameterError(f"unknown config key '{key}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ParameterError(f"config key '{key}' must be an object")
            _merge(base[k], v, key + ".")
        else:
            if not _same_kind(base[k], v):
                raise ParameterError(f"config key '{key}' has the wrong type")
            base[k] = float(v) if isinstance(base[k], float) else v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_override(cfg: dict, assignment: str):
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ParameterError(f"override '{assignment}' is not of the form key=value")
    path, text = assignment.split("=", 1)
    parts = path.strip().split(".")
    over = cur = {}
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = _parse_value(text)
    _merge(cfg, over)


class RunConfig:
    """Validated run configuration (a plain nested dict underneath)."""

    def __init__(self, data: dict = None):
        self.data = default_config()
        if data is not None:
            if not isinstance(data, dict):
                raise ParameterError("config document must be a JSON object")
            _merge(self.data, data)
        self.validate()

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        cfg = cls(_read_json(path) if path else None)
        for o in overrides:
            apply_override(cfg.data, o)
        cfg.validate()
        return cfg

    def save(self, path):
        dump_json(self.data, path)

    def __getitem__(self, k):
        return self.data[k]

    def validate(self):
        # building every module config runs its own checks
        self.raster_config()
        self.vmf()
        self.density_config()
        self.unc_config()
        self.planner_config()
        if self.data["trajectory"]["kind"] not in TRAJECTORY_KINDS:
            raise ParameterError(f"trajectory.kind must be one of {TRAJECTORY_KINDS}")
        if len(self.data["scene"]["room_size"]) != 3:
            raise ParameterError("scene.room_size must have 3 entries")

    def path(self, key) -> str:
        p = self.data["paths"][key]
        return p if os.path.isabs(p) else os.path.join(self.data["paths"]["root"], p)

    def raster_config(self) -> RasterConfig:
        return RasterConfig(**self.data["raster"])

    def vmf(self) -> VmfParams:
        return VmfParams(self.data["vmf"]["kappa"])

    @property
    def L(self) -> int:
        return int(self.data["vmf"]["L"])

    def density_config(self) -> DensityControlConfig:
        return DensityControlConfig(**self.data["density"])

    def unc_config(self) -> UncertaintyConfig:
        d = copy.deepcopy(self.data["uncertainty"])
        d["prior_cov"] = np.array(d["prior_cov"], dtype=np.float64)
        d["prior_mean"] = tuple(d["prior_mean"])
        return UncertaintyConfig(**d)

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(**self.data["planner"])
