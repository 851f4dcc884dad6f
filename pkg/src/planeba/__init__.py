"""Robust second-order plane-landmark bundle adjustment over a sliding window."""

from .geometry import (
    CpPlane,
    DegeneratePlaneError,
    GimbalLockError,
    Plane,
    Pose,
    compose,
    cp_to_plane,
    euler_to_rotation,
    fixed_point_to_plane,
    homogenize,
    invert,
    plane_to_cp,
    point_to_plane,
    transform_plane,
)
from .group_metrics import (
    EmptyGroupError,
    GroupMatrix,
    accumulate,
    fixed_group_cost,
    fixed_msgm,
    group_cost,
    marginalize_into_fixed,
    merge,
    msgm,
)
from .derivatives import (
    MetricLinearization,
    fixed_linearization,
    integrated_linearization,
    plane_jacobian,
    plane_second_deriv,
)
from .robust_kernel import HuberKernel, RobustContribution, robustify
from .solver import (
    DanglingLandmarkError,
    DivergedError,
    EmptyWindowError,
    LmConfig,
    NormalSystem,
    Observation,
    SingularSystemError,
    SolveReport,
    Window,
    assemble,
    lm_iterate,
    schur_solve,
    total_cost,
    update_state,
)
from .voxel_map import HAVoxelMap, PlaneLandmark, VoxelMapConfig, voxel_key
from .synthetic import Scene, SceneSpec, generate, standard_ba_cost
from .evaluation import Trajectory, ate_rmse, voxel_occupancy

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
