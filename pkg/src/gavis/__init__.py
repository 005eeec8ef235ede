"""Anisotropic visibility fields for Gaussian-splat scenes.

Directional per-particle visibility stored as spherical-harmonic
coefficients, visibility-aware uncertainty rasterization, and a
maximum-entropy next-best-view planner, all running on the CPU.
"""

from .camera import CameraView, look_at, project_gaussians, yaw_pitch_view
from .errors import (
    DataError, FormatError, GavisError, InvariantError, ParameterError, ParseError, SamplingError,
    UnsupportedEncodingError, VersionError,
)
from .metrics import ause_v, render_gt_visibility, vis_coverage
from .occluders import OccluderSet, Rectangle
from .planner import MappingLog, PlannerConfig, run_active_mapping, sample_candidates, select_nbv
from .raster import RasterConfig, rasterize, single_view_visibility
from .scene import Bounds, GaussianParticle, Scene, Trajectory, synth_two_room
from .shmath import ShCoeffBlock, VmfParams, real_sh_basis, vmf_sh_coeffs
from .uncertainty import EntropyMap, UncertaintyConfig, compensated_alpha, image_entropy, render_entropy
from .vfield import (
    DensityControlConfig, VisibilityField, construct_field, density_control, query, query_view,
)

__version__ = "0.1.0"
