"""Candidate sampling, next-best-view selection and the active-mapping loop.

The loop keeps the scene fixed (ground truth) and only grows the training
trajectory, so the field coefficients and the density-control products are
updated one view at a time.  The updates add the same per-view terms in
the same order as a from-scratch build, so results are bit-identical to
calling :func:`construct_field` and :func:`density_control` every step.
"""

from __future__ import annotations

import copy
import csv
import io as _io
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import CameraView, look_at, yaw_pitch_view
from .errors import ParameterError, SamplingError
from .io import camera_to_dict, dump_json
from .metrics import _surface, surface_seen
from .raster import RasterConfig
from .scene import Scene, Trajectory
from .shmath import VmfParams, num_coeffs
from .uncertainty import UncertaintyConfig, _render, image_entropy
from .vfield import (
    DEFAULT_DEGREE, DensityControlConfig, VisibilityField, sample_virtual_positions,
    view_contribution, view_visibility, virtual_particles,
)

MODES = ("SE3", "SE2")
SELECTIONS = ("greedy", "random")


@dataclass(frozen=True)
class PlannerConfig:
    mode: str = "SE3"
    num_candidates: int = 128
    se2_height: float = 1.5
    steps: int = 10
    seed: int = 0
    look_inward: bool = True
    clearance: float = 0.1
    width: int = 128
    height: int = 128
    fov: float = math.pi / 2
    selection: str = "greedy"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if int(self.num_candidates) < 1:
            raise ParameterError("num_candidates must be >= 1")
        if int(self.steps) < 0:
            raise ParameterError("steps must be >= 0")
        if self.clearance < 0:
            raise ParameterError("clearance must be >= 0")
        if self.selection not in SELECTIONS:
            raise ParameterError(f"selection must be one of {SELECTIONS}")


def _rng(seed, step_seed):
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF,
                                                     int(step_seed) & 0xFFFFFFFFFFFFFFFF]))


def sample_candidates(bounds, occluders, config: PlannerConfig, step_seed=0) -> list:
    """Collision-free candidate poses inside ``bounds``."""
    if not bounds.volume > 0:
        raise ParameterError("candidate sampling needs bounds with positive volume")
    rng = _rng(config.seed, step_seed)
    n = int(config.num_candidates)
    budget = 100 * n
    kw = dict(width=config.width, height=config.height, fov_h=config.fov, fov_v=config.fov)
    lo, ext = bounds.min, bounds.extent
    if config.mode == "SE2" and not lo[2] <= config.se2_height <= bounds.max[2]:
        raise ParameterError("se2_height lies outside the bounds")
    out = []
    attempts = 0
    while len(out) < n:
        if attempts >= budget:
            raise SamplingError(f"only {len(out)} of {n} collision-free poses after {budget} attempts")
        attempts += 1
        u = rng.random(3)
        p = lo + u * ext
        if config.mode == "SE2":
            p[2] = config.se2_height
        if occluders is not None and len(occluders) and occluders.distance(p[None])[0] < config.clearance:
            continue
        if config.mode == "SE2":
            out.append(yaw_pitch_view(p, 2.0 * math.pi * rng.random(), 0.0, **kw))
        elif config.look_inward and np.linalg.norm(bounds.center - p) > 1e-6:
            out.append(look_at(p, bounds.center, **kw))
        else:
            r = Rotation.random(random_state=rng).as_matrix()
            c2w = np.eye(4)
            c2w[:3, :3] = r
            c2w[:3, 3] = p
            out.append(CameraView(c2w, **kw))
    return out


def score_candidates(scene_aug, field, candidates, raster_config=None, unc_config=None):
    """(scores, mean per-pixel entropies) for each candidate."""
    unc_config = unc_config or UncertaintyConfig()
    scores = np.empty(len(candidates))
    means = np.empty(len(candidates))
    for i, cam in enumerate(candidates):
        em = _render(scene_aug, field, cam, raster_config, unc_config, None).map
        scores[i] = image_entropy(em, em.depth, unc_config)
        means[i] = float(em.entropy.mean())
    return scores, means


def select_nbv(scene_aug, field, candidates, raster_config=None, unc_config=None):
    """Candidate whose predicted image entropy is largest (lowest index on ties)."""
    if len(candidates) == 0:
        raise ParameterError("no candidates to select from")
    scores, _ = score_candidates(scene_aug, field, candidates, raster_config, unc_config)
    return candidates[int(np.argmax(scores))], scores


@dataclass
class MappingLog:
    chosen_views: Trajectory = dc_field(default_factory=Trajectory)
    per_step_scores: list = dc_field(default_factory=list)
    per_step_metrics: list = dc_field(default_factory=list)
    selection: str = "greedy"

    def __len__(self):
        return len(self.chosen_views)

    def rows(self):
        for k, ((scores, idx), (cov, ment)) in enumerate(zip(self.per_step_scores, self.per_step_metrics)):
            chosen = scores[idx] if scores is not None and len(scores) > idx else None
            yield k, idx, chosen, cov, ment

    def to_dict(self) -> dict:
        steps = []
        for (k, idx, score, cov, ment), (scores, _), view in zip(self.rows(), self.per_step_scores,
                                                                  self.chosen_views):
            steps.append({
                "step": k,
                "chosen_idx": idx,
                "score": score,
                "scores": None if scores is None else [None if s is None else float(s) for s in scores],
                "vis_coverage": cov,
                "mean_entropy": ment,
                "view": camera_to_dict(view),
            })
        return {"selection": self.selection, "steps": steps}

    def save_json(self, path):
        dump_json(self.to_dict(), path)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "chosen_idx", "score", "vis_coverage", "mean_entropy"])
        for k, idx, score, cov, ment in self.rows():
            w.writerow([k, idx, repr(float(score)), repr(float(cov)), repr(float(ment))])
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())


class IncrementalMapper:
    """Field, augmented scene and surface coverage for a growing trajectory."""

    def __init__(self, scene: Scene, occluders, vmf: VmfParams = None, L=DEFAULT_DEGREE,
                 dc_config: DensityControlConfig = None, raster_config: RasterConfig = None):
        self.scene = scene
        self.occluders = occluders
        self.vmf = vmf or VmfParams()
        self.L = int(L)
        self.dc = dc_config or DensityControlConfig()
        self.rc = raster_config or RasterConfig()
        self.views = []
        self.gamma = np.zeros((len(scene), num_coeffs(self.L)))
        self._real = ~scene.is_virtual
        pos = sample_virtual_positions(scene.bounds, self.dc)
        self.candidates = virtual_particles(pos, self.dc.virtual_scale, scene.bounds, scene.color_degree)
        self.probe = scene.concat(self.candidates)
        self.keep_prod = np.ones(len(self.probe))
        if occluders is not None and len(occluders):
            pts, wts, ids, normals, two = _surface(occluders)
            opaque = np.array([occluders.rectangles[k].opaque for k in ids], bool)
            self._surf = (pts[opaque], wts[opaque], normals[opaque], two[opaque])
            self.seen = np.zeros(int(opaque.sum()), bool)
        else:
            self._surf = None

    def add(self, view: CameraView):
        b = np.where(self._real, view_visibility(self.scene, view, self.rc), 0.0)
        self.gamma += view_contribution(self.scene, view, b, self.vmf, self.L)
        self.keep_prod *= 1.0 - view_visibility(self.probe, view, self.rc)
        if self._surf is not None:
            pts, _, normals, two = self._surf
            todo = np.nonzero(~self.seen)[0]
            self.seen[todo] = surface_seen(self.occluders, [view], pts[todo], normals[todo], two[todo])
        self.views.append(view)

    def extend(self, views):
        for v in views:
            self.add(v)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.views)

    def field(self) -> VisibilityField:
        return VisibilityField(self.gamma.copy(), len(self.views), self.vmf, self.L, self.scene.is_virtual)

    def augmented_scene(self) -> Scene:
        vt = (1.0 - self.keep_prod)[len(self.scene):]
        keep = np.nonzero(vt <= self.dc.eps_v)[0]
        return self.scene.concat(self.candidates.subset(keep))

    def coverage(self) -> float:
        if self._surf is None or not self.views:
            return 0.0
        w = self._surf[1]
        return float(w[self.seen].sum() / w.sum())


def run_active_mapping(scene: Scene, occluders, init_trajectory, config: PlannerConfig = None,
                       vmf: VmfParams = None, L=DEFAULT_DEGREE, dc_config=None, raster_config=None,
                       unc_config=None, progress=None, mapper: IncrementalMapper = None) -> MappingLog:
    """Greedy (or uniform-random baseline) next-best-view loop.

    Both selections draw the same candidate pool per step.  For the random
    baseline only the chosen candidate is rendered, so its log carries that
    one score.  A ``mapper`` already fed with ``init_trajectory`` may be
    passed to share that work between runs; it is copied, not modified.
    """
    config = config or PlannerConfig()
    unc_config = unc_config or UncertaintyConfig()
    if len(init_trajectory) == 0:
        raise ParameterError("initial trajectory is empty")
    if mapper is None:
        mapper = IncrementalMapper(scene, occluders, vmf, L, dc_config, raster_config)
        mapper.extend(init_trajectory)
    else:
        if mapper.views != list(init_trajectory):
            raise ParameterError("mapper was not built from init_trajectory")
        mapper = copy.deepcopy(mapper)
    log = MappingLog(selection=config.selection)
    chosen = []
    pick_rng = _rng(config.seed, 1 << 32)
    for step in range(int(config.steps)):
        field = mapper.field()
        aug = mapper.augmented_scene()
        cands = sample_candidates(scene.bounds, occluders, config, step)
        if config.selection == "greedy":
            scores, means = score_candidates(aug, field, cands, raster_config, unc_config)
            idx = int(np.argmax(scores))
            log.per_step_scores.append((scores.tolist(), idx))
            ment = float(means[idx])
        else:
            idx = int(pick_rng.integers(len(cands)))
            s, m = score_candidates(aug, field, [cands[idx]], raster_config, unc_config)
            full = [None] * len(cands)
            full[idx] = float(s[0])
            log.per_step_scores.append((full, idx))
            ment = float(m[0])
        mapper.add(cands[idx])
        chosen.append(cands[idx])
        log.per_step_metrics.append((mapper.coverage(), ment))
        if progress is not None:
            progress(step, idx, log.per_step_metrics[-1])
    log.chosen_views = Trajectory(chosen)
    return log
