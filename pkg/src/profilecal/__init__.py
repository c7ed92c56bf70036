"""Hand-eye translation calibration for robot-mounted laser profile sensors.

The package simulates stop-and-look profile scans of a known target,
reconstructs point clouds with only the hand-eye rotation, registers the
target model in each cloud and solves the stacked linear system for the
hand-eye translation.
"""

from .calibration import (
    CalibObservation,
    CalibResult,
    CalibSystem,
    RankDiagnosis,
    build_system,
    calibrate,
    check_rank_conditions,
    nullspace_vector_m2,
    solve_normal_equations,
    solve_translation,
)
from .cloud import LaserProfile, PointCloud, load_cloud, merge_clouds, save_cloud, transform_cloud
from .errors import (
    AssumptionViolationError,
    CoarseAlignmentError,
    DegenerateRotationError,
    FrameMismatchError,
    InvalidArgumentError,
    PlyParseError,
    ProfileCalError,
    RankConditionError,
    RegistrationError,
    SingularSystemError,
    StageError,
)
from .geometry import RigidTransform, apply, axis_of, compose, invert, rot_from_axis_angle, translate
from .harness import (
    ExperimentConfig,
    SweepReport,
    default_config,
    load_config,
    run_calibration,
    run_cloud_count_sweep,
    run_rotation_perturbation_sweep,
    save_config,
)
from .reconstruct import ReconstructedCloud, reconstruct_rotation_only, reconstruct_true
from .registration import RegistrationParams, RegistrationResult, coarse_align, icp, localize_target
from .scan_sim import ScanDataset, ScanScene, SensorModel, acquire_dataset, interpolate_trajectory
from .targets import GrayImage, TriMesh, synth_target, target_model_cloud

__version__ = "0.1.0"
